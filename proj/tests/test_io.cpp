#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/error.hpp"
#include "acetone/io.hpp"
#include "acetone/lut.hpp"
#include "acetone/random.hpp"
#include "doctest.h"

using namespace acetone;
namespace fs = std::filesystem;

namespace {

const char* kIdentity2 =
    "LUT_3D_SIZE 2\n"
    "0 0 0\n1 0 0\n0 1 0\n1 1 0\n"
    "0 0 1\n1 0 1\n0 1 1\n1 1 1\n";

Lut3d random_lut(std::uint64_t seed, int n) {
  Rng rng(seed);
  Lut3d lut(n);
  for (auto& v : lut.data()) v = static_cast<float>(rng.uniform());
  return lut;
}

struct Failure {
  Errc code;
  std::size_t line;
};

template <typename Fn>
Failure failure(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return {e.code(), e.line()};
  }
  FAIL("expected an error");
  return {Errc::io, 0};
}

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "acetone_test_io";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("minimal identity cube parses to the identity LUT") {
  const CubeFile f = parse_cube(std::string_view(kIdentity2));
  CHECK(f.lut == identity_lut(2));
  CHECK(f.clamped_count == 0);
  CHECK_FALSE(f.title.has_value());
}

TEST_CASE("comments and blank lines are transparent") {
  const std::string commented =
      "# header comment\nTITLE \"id\"\n\n# size next\nLUT_3D_SIZE 2\n# data\n"
      "0 0 0\n1 0 0\n0 1 0\n1 1 0\n\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n";
  const CubeFile f = parse_cube(std::string_view(commented));
  CHECK(f.lut == parse_cube(std::string_view(kIdentity2)).lut);
  CHECK(f.title == std::optional<std::string>("id"));
}

TEST_CASE("data rows are red-fastest") {
  const Lut3d lut = random_lut(1, 3);
  const std::string text = write_cube(lut, 6);
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && (std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-')) rows.push_back(line);
  }
  REQUIRE(rows.size() == 27);
  const CubeFile first = parse_cube("LUT_3D_SIZE 2\n" + rows[0] + "\n" + rows[1] + "\n" +
                                    "0 0 0\n0 0 0\n0 0 0\n0 0 0\n0 0 0\n0 0 0\n");
  for (int k = 0; k < 3; ++k) {
    CHECK(first.lut.at(0, 0, 0)[k] == doctest::Approx(lut.at(0, 0, 0)[k]).epsilon(1e-6));
    CHECK(first.lut.at(1, 0, 0)[k] == doctest::Approx(lut.at(1, 0, 0)[k]).epsilon(1e-6));
  }
}

TEST_CASE("cube parse errors are typed and carry line numbers") {
  const auto missing = failure([] { parse_cube(std::string_view("0 0 0\n")); });
  CHECK(missing.code == Errc::format);

  const auto no_size = failure([] { parse_cube(std::string_view("TITLE \"x\"\n")); });
  CHECK(no_size.code == Errc::format);

  const auto short_data = failure([] { parse_cube(std::string_view("LUT_3D_SIZE 2\n0 0 0\n1 0 0\n")); });
  CHECK(short_data.code == Errc::truncated);

  const auto bad_number = failure([] { parse_cube(std::string_view("LUT_3D_SIZE 2\n0 0 0\n1 x 0\n")); });
  CHECK(bad_number.code == Errc::parse);
  CHECK(bad_number.line == 3);

  const auto one_d = failure([] { parse_cube(std::string_view("LUT_1D_SIZE 16\n")); });
  CHECK(one_d.code == Errc::unsupported);
  CHECK(one_d.line == 1);
}

TEST_CASE("domain remap and clamping") {
  std::string text = "LUT_3D_SIZE 2\nDOMAIN_MIN 0 0 0\nDOMAIN_MAX 2 2 2\n";
  text += "0 0 0\n1 0 0\n0 1 0\n1 1 0\n0 0 1\n1 0 1\n0 1 1\n1.5 -0.25 1\n";
  const CubeFile f = parse_cube(std::string_view(text));
  CHECK(f.domain_max == Rgb{2.0f, 2.0f, 2.0f});
  CHECK(f.clamped_count == 2);
  CHECK(f.lut.at(1, 1, 1) == Rgb{1.0f, 0.0f, 1.0f});

  const auto inverted = failure([] { parse_cube(std::string_view("LUT_3D_SIZE 2\nDOMAIN_MIN 1 1 1\nDOMAIN_MAX 0 0 0\n0 0 0\n1 0 0\n0 1 0\n1 1 0\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n")); });
  CHECK(inverted.code == Errc::format);
}

TEST_CASE("cube write/parse round trips") {
  const std::string id_text = write_cube(identity_lut(2), 6);
  std::size_t data_lines = 0;
  std::istringstream in(id_text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0]))) ++data_lines;
  }
  CHECK(data_lines == 8);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const Lut3d lut = random_lut(s, 5);
    const Lut3d back6 = parse_cube(write_cube(lut, 6)).lut;
    const Lut3d back2 = parse_cube(write_cube(lut, 2)).lut;
    for (std::size_t i = 0; i < lut.data().size(); ++i) {
      CHECK(std::abs(back6.data()[i] - lut.data()[i]) < 1e-6f);
      CHECK(std::abs(back2.data()[i] - lut.data()[i]) <= 0.005f + 1e-7f);
    }
  }
}

TEST_CASE("vendor 33-point cube resamples to a frozen checksum") {
  const CubeFile f = read_cube("fixtures/vendor_33.cube");
  CHECK(f.lut.resolution() == 33);
  CHECK(f.title == std::optional<std::string>("warm film 33"));
  const Lut3d r = resample_lut(f.lut, 32);
  // Frozen from the first run of this parser on the fixture.
  CHECK(hex64(fnv1a64(write_cube(r, 6))) == "ade19d6275187883");
}

TEST_CASE("PPM decode and image round trips") {
  const std::string ppm = std::string("P6\n1 1\n255\n") + std::string("\xff\x00\x00", 3);
  const ImageBuf px = decode_ppm(ppm);
  CHECK(px.pixel(0) == Rgb{1.0f, 0.0f, 0.0f});

  Rng rng(3);
  ImageBuf img(13, 7);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  for (const char* ext : {".png", ".ppm"}) {
    const fs::path p = scratch_dir() / (std::string("roundtrip") + ext);
    write_image(img, p);
    const ImageBuf back = read_image(p);
    REQUIRE(back.width() == 13);
    REQUIRE(back.height() == 7);
    for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(back.data()[i] - img.data()[i]) <= 1.0f / 510.0f + 1e-7f);
  }
}

TEST_CASE("hand-written 2x2 PNG decodes to known pixels") {
  const ImageBuf img = read_image("fixtures/rgb_2x2.png");
  REQUIRE(img.width() == 2);
  REQUIRE(img.height() == 2);
  CHECK(img.pixel(0, 0) == Rgb{1.0f, 0.0f, 0.0f});
  CHECK(img.pixel(1, 0) == Rgb{0.0f, 1.0f, 0.0f});
  CHECK(img.pixel(0, 1) == Rgb{0.0f, 0.0f, 1.0f});
  CHECK(img.pixel(1, 1) == Rgb{128.0f / 255.0f, 64.0f / 255.0f, 32.0f / 255.0f});
}

TEST_CASE("image decode failures are typed") {
  CHECK(failure([] { decode_ppm(std::string("P3\n1 1\n255\n0 0 0\n")); }).code == Errc::unsupported);
  CHECK(failure([] { decode_ppm(std::string("P6\n2 2\n255\n") + std::string(5, '\0')); }).code == Errc::truncated);
  CHECK(failure([] { decode_png(std::string("\x89PNG\r\n\x1a\n", 8)); }).code != Errc::io);
  CHECK(failure([] { read_image("fixtures/does_not_exist.png"); }).code == Errc::io);
}

TEST_CASE("token records") {
  TokenFileRecord zero{"lut_a", "0123456789abcdef", std::vector<int>(64, 0)};
  const std::string line = format_token_record(zero);
  CHECK(format_token_record(parse_token_record(line, {})) == line);

  TokenFileRecord bad = zero;
  bad.tokens[5] = 256;
  CHECK(failure([&] { parse_token_record(format_token_record(bad), {}); }).code == Errc::out_of_range);

  TokenFileRecord short_rec = zero;
  short_rec.tokens.resize(63);
  CHECK(failure([&] { parse_token_record(format_token_record(short_rec), {}); }).code == Errc::format);

  TokenReadOptions expect;
  expect.expected_hash = "ffffffffffffffff";
  CHECK(failure([&] { parse_token_record(line, expect); }).code == Errc::hash_mismatch);

  CHECK(failure([] { parse_token_record("only one field", {}, 7); }).line == 7);
}

TEST_CASE("random token records round-trip losslessly") {
  Rng rng(4);
  std::vector<TokenFileRecord> recs;
  for (int i = 0; i < 10000; ++i) {
    TokenFileRecord r{"lut_" + std::to_string(i), "00000000deadbeef", {}};
    for (int t = 0; t < 64; ++t) r.tokens.push_back(static_cast<int>(rng.below(256)));
    recs.push_back(std::move(r));
  }
  std::stringstream ss;
  write_tokens(ss, recs);
  CHECK(read_tokens(ss, {}) == recs);
}

TEST_CASE("library manifests") {
  const fs::path p = scratch_dir() / "manifest.jsonl";
  const std::vector<ManifestEntry> entries{{"a", "luts/a.cube", SourceTag::filter},
                                           {"b", "/abs/b.cube", SourceTag::expert},
                                           {"c", "c.cube", SourceTag::fuse}};
  write_manifest(p, entries);
  CHECK(read_manifest(p) == entries);
  CHECK(resolve_entry(p, entries[0]) == scratch_dir() / "luts/a.cube");
  CHECK(resolve_entry(p, entries[1]) == fs::path("/abs/b.cube"));

  std::istringstream bad("{\"id\":\"x\",\"path\":\"y\",\"source_tag\":\"nope\"}\n");
  const auto f = failure([&] { parse_manifest(bad); });
  CHECK(f.code == Errc::format);
  CHECK(f.line == 1);
}
