#pragma once

// On-disk formats: .cube LUTs, 8-bit PNG / binary PPM images, LUT token
// records and JSON-lines library manifests.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "acetone/lut.hpp"

namespace acetone {

struct CubeFile {
  std::optional<std::string> title;
  Rgb domain_min{0.0f, 0.0f, 0.0f};
  Rgb domain_max{1.0f, 1.0f, 1.0f};
  Lut3d lut;
  // Entries that fell outside [0,1] and were clamped.
  std::size_t clamped_count = 0;
};

// Adobe .cube subset: TITLE, LUT_3D_SIZE, DOMAIN_MIN/DOMAIN_MAX (or the
// Resolve LUT_3D_INPUT_RANGE), '#' comments, red-fastest data rows.
// A non-default domain is reinterpreted onto the [0,1] lattice.
CubeFile parse_cube(std::istream& in);
CubeFile parse_cube(std::string_view text);
CubeFile read_cube(const std::filesystem::path& path);

std::string write_cube(const Lut3d& lut, int precision = 6,
                       const std::optional<std::string>& title = std::nullopt);
void write_cube_file(const std::filesystem::path& path, const Lut3d& lut, int precision = 6,
                     const std::optional<std::string>& title = std::nullopt);

enum class ImageFormat { png, ppm };

// Magic-byte detection; unsupported formats throw.
ImageBuf read_image(const std::filesystem::path& path);
ImageBuf decode_ppm(std::string_view bytes);
ImageBuf decode_png(std::string_view bytes);

// Format chosen from the extension (.png, .ppm).
void write_image(const ImageBuf& img, const std::filesystem::path& path);
std::string encode_ppm(const ImageBuf& img);
std::string encode_png(const ImageBuf& img);

inline constexpr int kTokensPerLut = 64;

struct TokenFileRecord {
  std::string lut_id;
  std::string codebook_hash;
  std::vector<int> tokens;

  friend bool operator==(const TokenFileRecord&, const TokenFileRecord&) = default;
};

// lut_id<TAB>codebook_hash<TAB>64 space-separated integers, one per line.
std::string format_token_record(const TokenFileRecord& record);

struct TokenReadOptions {
  int codebook_size = 256;
  // When set, every record must carry this hash.
  std::optional<std::string> expected_hash;
  int tokens_per_record = kTokensPerLut;
};

TokenFileRecord parse_token_record(std::string_view line, const TokenReadOptions& options,
                                   std::size_t line_number = 0);
void write_tokens(std::ostream& out, const std::vector<TokenFileRecord>& records);
std::vector<TokenFileRecord> read_tokens(std::istream& in, const TokenReadOptions& options);
void write_tokens_file(const std::filesystem::path& path,
                       const std::vector<TokenFileRecord>& records);
std::vector<TokenFileRecord> read_tokens_file(const std::filesystem::path& path,
                                              const TokenReadOptions& options);

enum class SourceTag { filter, expert, fuse };

const char* source_tag_name(SourceTag tag);
SourceTag parse_source_tag(std::string_view name);

struct ManifestEntry {
  std::string id;
  std::string path;
  SourceTag source_tag = SourceTag::filter;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// JSON lines with {id, path, source_tag}. Relative paths are kept as written.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest(std::istream& in);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Resolves a manifest entry path against the manifest's directory.
std::filesystem::path resolve_entry(const std::filesystem::path& manifest_path,
                                    const ManifestEntry& entry);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace acetone
