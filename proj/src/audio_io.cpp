#include "coughgan/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <span>

#include "coughgan/error.hpp"
#include "coughgan/rng.hpp"

namespace coughgan {

static_assert(std::endian::native == std::endian::little,
              "WAV and checkpoint codecs assume a little-endian host");

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate_hz <= 0)
    throw DomainError("sample rate must be positive, got " + std::to_string(clip.sample_rate_hz));
  for (double s : clip.samples)
    if (!std::isfinite(s)) throw DomainError("audio clip contains a non-finite sample");
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(where + "not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = get_u32(chunk + 4);
    if (size > bytes.size() - pos - 8) throw FormatError(where + "chunk extends past end of file");
    const unsigned char* body = chunk + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(where + "fmt chunk too short");
      format = get_u16(body);
      channels = get_u16(body + 2);
      rate = get_u32(body + 4);
      block_align = get_u16(body + 12);
      bits = get_u16(body + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw FormatError(where + "extensible fmt chunk too short");
        format = get_u16(body + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt) throw FormatError(where + "missing fmt chunk");
  if (!data) throw FormatError(where + "missing data chunk");
  if (rate == 0) throw FormatError(where + "sample rate is zero");
  if (channels != 1 && channels != 2)
    throw UnsupportedFormatError(where + std::to_string(channels) + " channels not supported");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32)
    throw UnsupportedFormatError(where + "encoding format " + std::to_string(format) + " with " +
                                 std::to_string(bits) + " bits not supported");
  const std::size_t bytes_per_sample = bits / 8;
  if (block_align != bytes_per_sample * channels) throw FormatError(where + "inconsistent block alignment");
  if (data_size % block_align != 0) throw FormatError(where + "data chunk holds a partial frame");

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  const std::size_t frames = data_size / block_align;
  clip.samples.resize(frames);
  auto sample_at = [&](std::size_t frame, std::size_t ch) -> double {
    const unsigned char* p = data + frame * block_align + ch * bytes_per_sample;
    if (pcm16) return static_cast<double>(static_cast<std::int16_t>(get_u16(p))) / 32768.0;
    const float f = std::bit_cast<float>(get_u32(p));
    return static_cast<double>(f);
  };
  for (std::size_t i = 0; i < frames; ++i) {
    clip.samples[i] = channels == 1 ? sample_at(i, 0) : 0.5 * (sample_at(i, 0) + sample_at(i, 1));
    if (!std::isfinite(clip.samples[i])) throw FormatError(where + "non-finite sample at frame " + std::to_string(i));
  }
  return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  validate_clip(clip);
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    if (std::abs(clip.samples[i]) > 1.0)
      throw DomainError("sample " + std::to_string(i) + " outside [-1, 1]");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 4);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : clip.samples) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

std::string to_string(CoughStatus s) {
  switch (s) {
    case CoughStatus::healthy: return "healthy";
    case CoughStatus::symptomatic: return "symptomatic";
    case CoughStatus::covid19: return "COVID-19";
  }
  return "?";
}

std::optional<CoughStatus> parse_status(const std::string& text) {
  if (text == "healthy") return CoughStatus::healthy;
  if (text == "symptomatic") return CoughStatus::symptomatic;
  if (text == "COVID-19") return CoughStatus::covid19;
  return std::nullopt;
}

namespace {

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first == last) return std::nullopt;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open manifest " + csv_path.string());
  const std::filesystem::path base = csv_path.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(csv_path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto col_uuid = column("uuid");
  const auto col_cough = column("cough_detected");
  if (!col_uuid) throw SchemaError(csv_path.string() + ": missing mandatory column 'uuid'");
  if (!col_cough) throw SchemaError(csv_path.string() + ": missing mandatory column 'cough_detected'");
  const auto col_status = column("status");
  const auto col_ssl = column("status_SSL");
  const auto col_snr = column("SNR");
  const auto col_path = column("audio_path");

  std::vector<ManifestRecord> records;
  std::set<std::string> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto fields = split_csv_line(line);
    fields.resize(std::max(fields.size(), header.size()));
    auto cell = [&](std::optional<std::size_t> c) -> std::string { return c ? fields[*c] : std::string(); };

    ManifestRecord r;
    r.uuid = cell(col_uuid);
    if (r.uuid.empty()) throw RowError(row, "empty uuid");
    if (!seen.insert(r.uuid).second) throw RowError(row, "duplicate uuid '" + r.uuid + "'");

    const auto cough = parse_double(cell(col_cough));
    if (!cough) throw RowError(row, "unparsable cough_detected '" + cell(col_cough) + "'");
    if (*cough < 0.0 || *cough > 1.0) throw RowError(row, "cough_detected outside [0, 1]");
    r.cough_detected = *cough;

    if (const std::string s = cell(col_status); !s.empty()) {
      r.status = parse_status(s);
      if (!r.status) throw RowError(row, "unknown status '" + s + "'");
    }
    if (const std::string s = cell(col_ssl); !s.empty()) {
      r.status_ssl = parse_status(s);
      if (!r.status_ssl || *r.status_ssl == CoughStatus::symptomatic)
        throw RowError(row, "unknown status_SSL '" + s + "'");
    }
    if (const std::string s = cell(col_snr); !s.empty()) {
      r.snr = parse_double(s);
      if (!r.snr) throw RowError(row, "unparsable SNR '" + s + "'");
    }
    const std::string rel = cell(col_path);
    r.audio_path = base / (rel.empty() ? r.uuid + ".wav" : rel);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<ManifestRecord> filter_manifest(const std::vector<ManifestRecord>& records,
                                            double min_cough_detected, bool require_ssl) {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), [&](const ManifestRecord& r) {
    return r.cough_detected >= min_cough_detected && (!require_ssl || r.status_ssl.has_value());
  });
  return out;
}

std::vector<std::string> class_names(LabelSource source) {
  if (source == LabelSource::status_ssl) return {"healthy", "COVID-19"};
  return {"healthy", "symptomatic", "COVID-19"};
}

std::optional<int> class_label(const ManifestRecord& r, LabelSource source) {
  if (source == LabelSource::status) {
    if (!r.status) return std::nullopt;
    return static_cast<int>(*r.status);
  }
  const auto s = r.status_ssl ? r.status_ssl : r.status;
  if (!s || *s == CoughStatus::symptomatic) return std::nullopt;
  return *s == CoughStatus::healthy ? 0 : 1;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const std::vector<ManifestRecord>& records,
                                                       LabelSource source) {
  std::vector<std::vector<std::size_t>> by_class(class_names(source).size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto label = class_label(records[i], source);
    if (!label) throw DataError("record '" + records[i].uuid + "' has no class label");
    by_class[static_cast<std::size_t>(*label)].push_back(i);
  }
  return by_class;
}

}  // namespace

DatasetSplit stratified_split(const std::vector<ManifestRecord>& records,
                              const std::array<double, 3>& ratios, std::uint64_t seed,
                              LabelSource source) {
  for (double r : ratios)
    if (!(r > 0.0)) throw DomainError("split ratios must be positive");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw DomainError("split ratios must sum to 1");

  DatasetSplit split;
  split.seed = seed;
  Rng rng(seed);
  auto by_class = indices_by_class(records, source);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    rng.shuffle(std::span(idx));
    const std::size_t n = idx.size();
    std::size_t train_end = n, val_end = n;
    if (n < 3) {
      split.warnings.push_back(static_cast<int>(c));
    } else {
      train_end = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
      val_end = static_cast<std::size_t>(std::llround(static_cast<double>(n) * (ratios[0] + ratios[1])));
      train_end = std::min(train_end, n);
      val_end = std::clamp(val_end, train_end, n);
    }
    for (std::size_t k = 0; k < n; ++k) {
      auto& part = k < train_end ? split.train : (k < val_end ? split.validation : split.test);
      part.push_back(records[idx[k]]);
    }
  }
  return split;
}

std::vector<ManifestRecord> balance_classes(const std::vector<ManifestRecord>& records,
                                            std::uint64_t seed, LabelSource source) {
  auto by_class = indices_by_class(records, source);
  std::size_t minority = records.size();
  for (const auto& idx : by_class)
    if (!idx.empty()) minority = std::min(minority, idx.size());
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (auto& idx : by_class) {
    rng.shuffle(std::span(idx));
    const std::size_t n = std::min(minority, idx.size());
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<ManifestRecord> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(records[i]);
  return out;
}

ManifestStats manifest_stats(const std::vector<ManifestRecord>& records) {
  ManifestStats st;
  const auto names = class_names(LabelSource::status_ssl);
  for (const auto& n : names) st.class_counts[n] = 0;
  st.class_counts["unlabeled"] = 0;
  for (const auto& n : class_names(LabelSource::status)) st.status_counts[n] = 0;
  st.status_counts["missing"] = 0;
  for (const auto& n : names) st.status_ssl_counts[n] = 0;
  st.status_ssl_counts["missing"] = 0;

  for (const auto& r : records) {
    ++st.total;
    const auto label = class_label(r, LabelSource::status_ssl);
    ++st.class_counts[label ? names[static_cast<std::size_t>(*label)] : "unlabeled"];
    ++st.status_counts[r.status ? to_string(*r.status) : "missing"];
    ++st.status_ssl_counts[r.status_ssl ? to_string(*r.status_ssl) : "missing"];
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(r.cough_detected * 10.0));
    ++st.cough_detected_histogram[bin];
  }
  return st;
}

}  // namespace coughgan
