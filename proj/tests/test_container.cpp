#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "gser/container.hpp"
#include "gser/rng.hpp"
#include "gser/scheme.hpp"

using namespace gser;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("gser_container_" + std::to_string(std::uint64_t(Catch::rngSeed()) + 7919u));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

GridDims small_dims(int nd = 3) {
  GridDims d;
  d.n1 = 4;
  d.n2 = 5;
  d.ns = 2;
  d.k_enc = 5;
  d.nd = nd;
  d.voxel_size = {0.66, 0.66, 3.3};
  return d;
}

// float32 storage: for bit-identical round trips the doubles we write must be
// exactly representable in float, so draw from a dyadic grid (k/1024 with
// |k| < 2^13 needs at most 23 mantissa bits).
double dyadic(RngStream& rng) { return double(int(rng.normal() * 2048.0)) / 1024.0; }

ImageStack random_image(const GridDims& d, std::uint64_t seed) {
  ImageStack x(d);
  RngStream rng(seed, {0x696d67u});
  for (std::int64_t i = 0; i < x.data.size(); ++i) x.data[i] = dyadic(rng);
  return x;
}

SlabStack random_slab(const GridDims& d, std::uint64_t seed) {
  SlabStack x(d);
  RngStream rng(seed, {0x736c62u});
  for (std::int64_t i = 0; i < x.data.size(); ++i) {
    const double re = dyadic(rng);
    const double im = dyadic(rng);
    x.data[i] = std::complex<double>(re, im);
  }
  return x;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  REQUIRE(out.good());
}

}  // namespace

TEST_CASE("real volume containers round trip bit-for-bit") {
  TempDir tmp;
  const GridDims d = small_dims();
  const ImageStack x = random_image(d, 11);
  const std::string path = tmp.file("image.gsv");
  write_container(path, x);

  ContainerHeader h;
  const ImageStack y = read_image_container(path, &h);
  REQUIRE(y.dims.n1 == d.n1);
  REQUIRE(y.dims.n2 == d.n2);
  REQUIRE(y.dims.ns == d.ns);
  REQUIRE(y.dims.k_enc == d.k_enc);
  REQUIRE(y.dims.nd == d.nd);
  REQUIRE(y.dims.voxel_size[0] == d.voxel_size[0]);
  REQUIRE(y.dims.voxel_size[2] == d.voxel_size[2]);
  REQUIRE(h.kind == ContainerKind::ImageStack);
  REQUIRE(h.dtype == ContainerDtype::Real32);
  REQUIRE(y.data.size() == x.data.size());
  for (std::int64_t i = 0; i < x.data.size(); ++i) REQUIRE(y.data[i] == x.data[i]);
}

TEST_CASE("complex volume containers preserve phase to the bit") {
  TempDir tmp;
  const GridDims d = small_dims(2);
  const SlabStack x = random_slab(d, 23);
  const std::string path = tmp.file("slab.gsv");
  write_container(path, x);

  const SlabStack y = read_slab_container(path);
  REQUIRE(y.data.size() == x.data.size());
  for (std::int64_t i = 0; i < x.data.size(); ++i) {
    REQUIRE(y.data[i].real() == x.data[i].real());
    REQUIRE(y.data[i].imag() == x.data[i].imag());
  }
}

TEST_CASE("phase field containers round trip") {
  TempDir tmp;
  GridDims d = small_dims(1);
  PhaseField p(d);
  RngStream rng(5, {0x706873u});
  for (std::int64_t i = 0; i < p.data.size(); ++i) p.data[i] = dyadic(rng);
  const std::string path = tmp.file("phase.gsv");
  write_container(path, p);

  const PhaseField q = read_phase_container(path);
  for (std::int64_t i = 0; i < p.data.size(); ++i) REQUIRE(q.data[i] == p.data[i]);
}

TEST_CASE("scheme and provenance survive the round trip") {
  TempDir tmp;
  const GridDims d = small_dims(3);
  const ImageStack x = random_image(d, 31);
  const DiffusionScheme scheme = DiffusionScheme::uniform(1, 2, 800.0);
  nlohmann::json prov;
  prov["command"] = "simulate";
  prov["seed"] = 42;
  prov["params"] = {{"noise_sigma", 0.05}};
  const std::string path = tmp.file("with_meta.gsv");
  write_container(path, x, prov, &scheme);

  ContainerHeader h;
  DiffusionScheme s;
  (void)read_image_container(path, &h, &s);
  REQUIRE(s.bvals.size() == scheme.bvals.size());
  for (std::size_t i = 0; i < s.bvals.size(); ++i) {
    REQUIRE(s.bvals[i] == scheme.bvals[i]);
    REQUIRE((s.bvecs[i] - scheme.bvecs[i]).norm() == 0.0);
  }
  REQUIRE(h.provenance.at("command").get<std::string>() == "simulate");
  REQUIRE(h.provenance.at("seed").get<int>() == 42);
  REQUIRE(h.provenance.at("params").at("noise_sigma").get<double>() == 0.05);
}

TEST_CASE("arbitrary doubles reach a fixed point after one quantization") {
  TempDir tmp;
  const GridDims d = small_dims(2);
  ImageStack x(d);
  RngStream rng(99, {0x646274u});
  for (std::int64_t i = 0; i < x.data.size(); ++i) x.data[i] = rng.normal();

  write_container(tmp.file("first.gsv"), x);
  const ImageStack y = read_image_container(tmp.file("first.gsv"));
  write_container(tmp.file("second.gsv"), y);
  const ImageStack z = read_image_container(tmp.file("second.gsv"));

  // one float32 quantization, then stable forever
  for (std::int64_t i = 0; i < x.data.size(); ++i) {
    REQUIRE(z.data[i] == y.data[i]);
    REQUIRE(std::abs(y.data[i] - x.data[i]) <= 1e-6 * std::abs(x.data[i]));
  }
  REQUIRE(read_all(tmp.file("first.gsv")) == read_all(tmp.file("second.gsv")));
}

TEST_CASE("writing identical content twice yields identical bytes") {
  TempDir tmp;
  const GridDims d = small_dims();
  const ImageStack x = random_image(d, 77);
  nlohmann::json prov;
  prov["command"] = "recon";
  write_container(tmp.file("a.gsv"), x, prov);
  write_container(tmp.file("b.gsv"), x, prov);
  REQUIRE(read_all(tmp.file("a.gsv")) == read_all(tmp.file("b.gsv")));
}

TEST_CASE("typed readers reject containers of the wrong kind") {
  TempDir tmp;
  const GridDims d = small_dims(1);
  const ImageStack x = random_image(d, 3);
  const std::string path = tmp.file("image.gsv");
  write_container(path, x);

  REQUIRE_THROWS_AS(read_slab_container(path), IoError);
  REQUIRE_THROWS_AS(read_phase_container(path), IoError);
  REQUIRE_THROWS_WITH(read_slab_container(path),
                      Catch::Matchers::ContainsSubstring("expected a slab_stack"));
}

TEST_CASE("a bad magic line is rejected with its byte position") {
  TempDir tmp;
  const std::string path = tmp.file("bogus.gsv");
  write_all(path, "NOTAVOL 10\n{\"x\": 1}  garbage");
  REQUIRE_THROWS_WITH(read_container(path), Catch::Matchers::ContainsSubstring("byte 0"));
  REQUIRE_THROWS_AS(read_container(path), IoError);
}

TEST_CASE("a corrupted header reports a parse error with an offset") {
  TempDir tmp;
  const GridDims d = small_dims(1);
  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(d, 9));
  std::string bytes = read_all(good_path);

  // smash a brace inside the JSON header
  const std::size_t brace = bytes.find('{');
  REQUIRE(brace != std::string::npos);
  bytes[brace] = '#';
  const std::string path = tmp.file("broken_header.gsv");
  write_all(path, bytes);

  REQUIRE_THROWS_AS(read_container(path), IoError);
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("header parse error at byte"));
}

TEST_CASE("a truncated payload is reported with expected and found sizes") {
  TempDir tmp;
  const GridDims d = small_dims(2);
  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(d, 13));
  std::string bytes = read_all(good_path);
  bytes.resize(bytes.size() - 10);
  const std::string path = tmp.file("truncated.gsv");
  write_all(path, bytes);

  REQUIRE_THROWS_AS(read_container(path), IoError);
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("truncated payload"));
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("payload bytes at offset"));
}

TEST_CASE("a truncated header is rejected") {
  TempDir tmp;
  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(small_dims(1), 1));
  std::string bytes = read_all(good_path);
  const std::size_t brace = bytes.find('{');
  bytes.resize(brace + 5);
  const std::string path = tmp.file("short_header.gsv");
  write_all(path, bytes);
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("truncated header"));
}

TEST_CASE("schema version mismatches are rejected") {
  TempDir tmp;
  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(small_dims(1), 2));
  std::string bytes = read_all(good_path);
  const std::string key = "\"schema_version\":1";
  const std::size_t at = bytes.find(key);
  REQUIRE(at != std::string::npos);
  bytes.replace(at, key.size(), "\"schema_version\":9");
  const std::string path = tmp.file("schema9.gsv");
  write_all(path, bytes);
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("unsupported schema version 9"));
}

TEST_CASE("kind and dtype must be consistent") {
  TempDir tmp;
  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(small_dims(1), 4));
  std::string bytes = read_all(good_path);

  SECTION("unknown dtype") {
    const std::string key = "\"dtype\":\"real32\"";
    const std::size_t at = bytes.find(key);
    REQUIRE(at != std::string::npos);
    bytes.replace(at, key.size(), "\"dtype\":\"real64\"");
    const std::string path = tmp.file("bad_dtype.gsv");
    write_all(path, bytes);
    REQUIRE_THROWS_WITH(read_container(path),
                        Catch::Matchers::ContainsSubstring("unknown dtype 'real64'"));
  }
  SECTION("dtype contradicting kind") {
    const std::string key = "\"dtype\":\"real32\"";
    const std::size_t at = bytes.find(key);
    REQUIRE(at != std::string::npos);
    // keep overall header length identical so the magic line stays valid
    bytes.replace(at, key.size(), "\"dtype\":\"cplx64\"");
    std::string path = tmp.file("cplx_on_image.gsv");
    write_all(path, bytes);
    REQUIRE_THROWS_WITH(read_container(path),
                        Catch::Matchers::ContainsSubstring("unknown dtype"));
  }
  SECTION("complex64 on an image stack") {
    // rewrite the header wholesale with a contradictory dtype; the header's
    // extent comes from the byte count on the magic line, not brace matching
    const std::size_t nl = bytes.find('\n');
    std::istringstream magic(bytes.substr(0, nl));
    std::string tag;
    std::size_t header_bytes = 0;
    magic >> tag >> header_bytes;
    nlohmann::json j = nlohmann::json::parse(bytes.substr(nl + 1, header_bytes));
    j["dtype"] = "complex64";
    const std::string header = j.dump();
    std::ostringstream out;
    out << kContainerMagic << ' ' << header.size() << '\n' << header;
    out << std::string(std::size_t(small_dims(1).image_size()) * 8, '\0');
    const std::string path = tmp.file("mismatch.gsv");
    write_all(path, out.str());
    REQUIRE_THROWS_WITH(read_container(path),
                        Catch::Matchers::ContainsSubstring("does not match kind"));
  }
}

TEST_CASE("unknown kinds and absent files are rejected") {
  TempDir tmp;
  REQUIRE_THROWS_AS(read_container(tmp.file("missing.gsv")), IoError);

  const std::string good_path = tmp.file("good.gsv");
  write_container(good_path, random_image(small_dims(1), 6));
  std::string bytes = read_all(good_path);
  const std::string key = "\"kind\":\"image_stack\"";
  const std::size_t at = bytes.find(key);
  REQUIRE(at != std::string::npos);
  bytes.replace(at, key.size(), "\"kind\":\"voxel_stack\"");
  const std::string path = tmp.file("bad_kind.gsv");
  write_all(path, bytes);
  REQUIRE_THROWS_WITH(read_container(path),
                      Catch::Matchers::ContainsSubstring("unknown kind 'voxel_stack'"));
}

TEST_CASE("read_container returns exactly one populated member") {
  TempDir tmp;
  const GridDims d = small_dims(2);
  write_container(tmp.file("s.gsv"), random_slab(d, 8));
  const AnyVolume v = read_container(tmp.file("s.gsv"));
  REQUIRE(v.slab.has_value());
  REQUIRE_FALSE(v.image.has_value());
  REQUIRE_FALSE(v.phase.has_value());
  REQUIRE(v.header.axis_order() == "slab,encoding,dwi,row,col");
}
