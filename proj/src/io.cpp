#include "acetone/io.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "acetone/error.hpp"

namespace acetone {

namespace {

constexpr int kMaxCubeSize = 256;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view token, double& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const char* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

double number_at(std::string_view token, std::size_t line) {
  double v = 0.0;
  if (!parse_double(token, v)) {
    throw Error(Errc::parse, "expected a number, found '" + std::string(token) + "'", line);
  }
  return v;
}

Rgb triple(const std::vector<std::string_view>& parts, std::size_t first, std::size_t line) {
  if (parts.size() != first + 3) {
    throw Error(Errc::parse, "expected three values", line);
  }
  return {static_cast<float>(number_at(parts[first], line)),
          static_cast<float>(number_at(parts[first + 1], line)),
          static_cast<float>(number_at(parts[first + 2], line))};
}

bool is_keyword_line(std::string_view s) {
  const char c = s.front();
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

CubeFile parse_cube(std::istream& in) {
  CubeFile cube;
  int size = 0;
  std::vector<float> values;
  std::size_t expected = 0;
  std::size_t line_no = 0;
  std::string raw;
  bool in_data = false;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;

    if (is_keyword_line(line)) {
      if (in_data) throw Error(Errc::parse, "header keyword after data rows", line_no);
      const auto parts = split_ws(line);
      const std::string_view key = parts.front();
      if (key == "TITLE") {
        std::string_view rest = trim(line.substr(5));
        if (rest.size() >= 2 && rest.front() == '"' && rest.back() == '"') {
          rest = rest.substr(1, rest.size() - 2);
        }
        cube.title = std::string(rest);
      } else if (key == "LUT_3D_SIZE") {
        if (parts.size() != 2) throw Error(Errc::parse, "LUT_3D_SIZE takes one value", line_no);
        const double v = number_at(parts[1], line_no);
        if (v != std::floor(v) || v < 2 || v > kMaxCubeSize) {
          throw Error(Errc::format, "unsupported LUT_3D_SIZE " + std::string(parts[1]), line_no);
        }
        size = static_cast<int>(v);
        expected = 3 * static_cast<std::size_t>(size) * size * size;
        values.reserve(expected);
      } else if (key == "LUT_1D_SIZE" || key == "LUT_1D_INPUT_RANGE") {
        throw Error(Errc::unsupported, "1D and shaper LUTs are not supported", line_no);
      } else if (key == "DOMAIN_MIN") {
        cube.domain_min = triple(parts, 1, line_no);
      } else if (key == "DOMAIN_MAX") {
        cube.domain_max = triple(parts, 1, line_no);
      } else if (key == "LUT_3D_INPUT_RANGE") {
        if (parts.size() != 3) throw Error(Errc::parse, "input range takes two values", line_no);
        const auto lo = static_cast<float>(number_at(parts[1], line_no));
        const auto hi = static_cast<float>(number_at(parts[2], line_no));
        cube.domain_min = {lo, lo, lo};
        cube.domain_max = {hi, hi, hi};
      } else {
        throw Error(Errc::parse, "unknown keyword '" + std::string(key) + "'", line_no);
      }
      continue;
    }

    if (size == 0) throw Error(Errc::format, "data row before LUT_3D_SIZE", line_no);
    in_data = true;
    const auto parts = split_ws(line);
    if (parts.size() != 3) {
      throw Error(Errc::parse, "data rows hold exactly three values", line_no);
    }
    if (values.size() >= expected) {
      throw Error(Errc::truncated,
                  "more than " + std::to_string(expected / 3) + " data rows", line_no);
    }
    for (const auto& p : parts) values.push_back(static_cast<float>(number_at(p, line_no)));
  }

  if (size == 0) throw Error(Errc::format, "missing LUT_3D_SIZE", line_no);
  if (values.size() != expected) {
    throw Error(Errc::truncated,
                "expected " + std::to_string(expected / 3) + " data rows, found " +
                    std::to_string(values.size() / 3),
                line_no);
  }
  for (int c = 0; c < 3; ++c) {
    if (!(cube.domain_min[c] < cube.domain_max[c])) {
      throw Error(Errc::format, "DOMAIN_MIN must be below DOMAIN_MAX");
    }
  }
  cube.lut = Lut3d(size, std::move(values));
  cube.clamped_count = cube.lut.clamp_values();
  return cube;
}

CubeFile parse_cube(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_cube(in);
}

CubeFile read_cube(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  return parse_cube(in);
}

std::string write_cube(const Lut3d& lut, int precision, const std::optional<std::string>& title) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  if (title) out << "TITLE \"" << *title << "\"\n";
  out << "LUT_3D_SIZE " << lut.resolution() << '\n';
  out << "DOMAIN_MIN 0.0 0.0 0.0\n";
  out << "DOMAIN_MAX 1.0 1.0 1.0\n";
  out << std::fixed << std::setprecision(precision);
  const auto d = lut.data();
  for (std::size_t i = 0; i < d.size(); i += 3) {
    out << d[i] << ' ' << d[i + 1] << ' ' << d[i + 2] << '\n';
  }
  return out.str();
}

void write_cube_file(const std::filesystem::path& path, const Lut3d& lut, int precision,
                     const std::optional<std::string>& title) {
  write_file_bytes(path, write_cube(lut, precision, title));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

// --- images -----------------------------------------------------------------

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Reads one PPM header field, skipping whitespace and comments.
std::size_t ppm_field(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) throw Error(Errc::format, "PPM header value too large");
    ++pos;
    ++digits;
  }
  if (digits == 0) throw Error(Errc::format, "malformed PPM header");
  return value;
}

}  // namespace

ImageBuf decode_ppm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw Error(Errc::unsupported, "only binary PPM (P6) is supported");
  }
  std::size_t pos = 2;
  const std::size_t width = ppm_field(bytes, pos);
  const std::size_t height = ppm_field(bytes, pos);
  const std::size_t maxval = ppm_field(bytes, pos);
  if (maxval != 255) throw Error(Errc::unsupported, "only 8-bit PPM (maxval 255) is supported");
  if (width == 0 || height == 0) throw Error(Errc::format, "PPM has zero dimension");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw Error(Errc::truncated, "PPM header not terminated");
  }
  ++pos;
  const std::size_t need = width * height * 3;
  if (bytes.size() - pos < need) throw Error(Errc::truncated, "PPM pixel data truncated");
  std::vector<float> pixels(need);
  for (std::size_t i = 0; i < need; ++i) {
    pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return ImageBuf(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

std::string encode_ppm(const ImageBuf& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  const auto d = img.data();
  out.reserve(out.size() + d.size());
  for (float v : d) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

ImageBuf decode_png(std::string_view bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::format, "PNG decode failed: " + msg);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw Error(Errc::unsupported, "16-bit PNG is not supported");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::truncated, "PNG decode failed: " + msg);
  }
  std::vector<float> pixels(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) pixels[i] = buffer[i] / 255.0f;
  return ImageBuf(static_cast<int>(image.width), static_cast<int>(image.height),
                  std::move(pixels));
}

std::string encode_png(const ImageBuf& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> pixels(img.data().size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = to_byte(img.data()[i]);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::io, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

ImageBuf read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw Error(Errc::unsupported, "unrecognized image format: " + path.string());
}

void write_image(const ImageBuf& img, const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") {
    write_file_bytes(path, encode_png(img));
  } else if (ext == ".ppm") {
    write_file_bytes(path, encode_ppm(img));
  } else {
    throw Error(Errc::unsupported, "unsupported image extension '" + ext + "'");
  }
}

// --- token records ----------------------------------------------------------

std::string format_token_record(const TokenFileRecord& record) {
  std::string out = record.lut_id;
  out += '\t';
  out += record.codebook_hash;
  out += '\t';
  for (std::size_t i = 0; i < record.tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(record.tokens[i]);
  }
  return out;
}

TokenFileRecord parse_token_record(std::string_view line, const TokenReadOptions& options,
                                   std::size_t line_number) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto tab1 = line.find('\t');
  const auto tab2 = tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
  if (tab2 == std::string_view::npos) {
    throw Error(Errc::parse, "token record needs three tab-separated fields", line_number);
  }
  TokenFileRecord record;
  record.lut_id = std::string(line.substr(0, tab1));
  record.codebook_hash = std::string(line.substr(tab1 + 1, tab2 - tab1 - 1));
  if (record.lut_id.empty()) throw Error(Errc::parse, "empty lut_id", line_number);
  for (auto tok : split_ws(line.substr(tab2 + 1))) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw Error(Errc::parse, "non-integer token '" + std::string(tok) + "'", line_number);
    }
    if (v < 0 || v >= options.codebook_size) {
      throw Error(Errc::out_of_range,
                  "token " + std::to_string(v) + " outside codebook of size " +
                      std::to_string(options.codebook_size),
                  line_number);
    }
    record.tokens.push_back(v);
  }
  if (static_cast<int>(record.tokens.size()) != options.tokens_per_record) {
    throw Error(Errc::format,
                "expected " + std::to_string(options.tokens_per_record) + " tokens, found " +
                    std::to_string(record.tokens.size()),
                line_number);
  }
  if (options.expected_hash && record.codebook_hash != *options.expected_hash) {
    throw Error(Errc::hash_mismatch,
                "record hash " + record.codebook_hash + " does not match codebook " +
                    *options.expected_hash,
                line_number);
  }
  return record;
}

void write_tokens(std::ostream& out, const std::vector<TokenFileRecord>& records) {
  for (const auto& r : records) out << format_token_record(r) << '\n';
}

std::vector<TokenFileRecord> read_tokens(std::istream& in, const TokenReadOptions& options) {
  std::vector<TokenFileRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    records.push_back(parse_token_record(line, options, line_no));
  }
  return records;
}

void write_tokens_file(const std::filesystem::path& path,
                       const std::vector<TokenFileRecord>& records) {
  std::ostringstream out;
  write_tokens(out, records);
  write_file_bytes(path, out.str());
}

std::vector<TokenFileRecord> read_tokens_file(const std::filesystem::path& path,
                                              const TokenReadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  return read_tokens(in, options);
}

// --- manifests --------------------------------------------------------------

const char* source_tag_name(SourceTag tag) {
  switch (tag) {
    case SourceTag::filter: return "filter";
    case SourceTag::expert: return "expert";
    case SourceTag::fuse: return "fuse";
  }
  return "filter";
}

SourceTag parse_source_tag(std::string_view name) {
  if (name == "filter") return SourceTag::filter;
  if (name == "expert") return SourceTag::expert;
  if (name == "fuse") return SourceTag::fuse;
  throw Error(Errc::format, "unknown source_tag '" + std::string(name) + "'");
}

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse, e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("path") || !j["id"].is_string() ||
        !j["path"].is_string()) {
      throw Error(Errc::format, "manifest rows need string fields id and path", line_no);
    }
    ManifestEntry e;
    e.id = j["id"].get<std::string>();
    e.path = j["path"].get<std::string>();
    if (j.contains("source_tag")) {
      if (!j["source_tag"].is_string()) throw Error(Errc::format, "bad source_tag", line_no);
      try {
        e.source_tag = parse_source_tag(j["source_tag"].get<std::string>());
      } catch (const Error& err) {
        throw Error(err.code(), err.message(), line_no);
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  return parse_manifest(in);
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["source_tag"] = source_tag_name(e.source_tag);
    out += j.dump();
    out += '\n';
  }
  write_file_bytes(path, out);
}

std::filesystem::path resolve_entry(const std::filesystem::path& manifest_path,
                                    const ManifestEntry& entry) {
  const std::filesystem::path p(entry.path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace acetone
