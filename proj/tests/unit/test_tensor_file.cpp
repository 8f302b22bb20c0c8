#include <doctest.h>

#include <fstream>

#include "cac/errors.hpp"
#include "cac/tensor_file.hpp"
#include "helpers.hpp"

using namespace cac;
using cac::test::TempDir;

TEST_CASE("tensor file round trip") {
  TempDir dir;
  TensorFile f;
  f.tensors["a"] = {{2, 3}, DType::f64, {1, 2, 3, 4, 5, 6.25}};
  f.tensors["b.c"] = {{4}, DType::f32, {0.5, -1, 1e10, 3}};
  f.tensors["scalar"] = {{}, DType::f64, {42}};
  f.metadata["epoch"] = "7";
  f.metadata["note"] = "x=\"y\"";
  write_tensor_file(dir / "t.safetensors", f);
  const TensorFile g = read_tensor_file(dir / "t.safetensors");
  CHECK(g.metadata == f.metadata);
  REQUIRE(g.tensors.size() == 3);
  CHECK(g.tensors.at("a").data == f.tensors.at("a").data);
  CHECK(g.tensors.at("a").shape == std::vector<std::int64_t>{2, 3});
  CHECK(g.tensors.at("b.c").dtype == DType::f32);
  CHECK(g.tensors.at("b.c").data == f.tensors.at("b.c").data);
  CHECK(g.tensors.at("scalar").data == std::vector<double>{42});

  // the header is the 8-byte little-endian length followed by JSON
  std::ifstream in(dir / "t.safetensors", std::ios::binary);
  unsigned char len[8];
  in.read(reinterpret_cast<char*>(len), 8);
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | len[i];
  std::string header(n, '\0');
  in.read(header.data(), static_cast<std::streamsize>(n));
  CHECK(header.front() == '{');
  CHECK(header.find("\"F64\"") != std::string::npos);
  CHECK(header.find("__metadata__") != std::string::npos);
}

TEST_CASE("corrupt tensor files raise load errors") {
  TempDir dir;
  std::ofstream(dir / "short.bin") << "abc";
  CHECK_THROWS_AS(read_tensor_file(dir / "short.bin"), LoadError);
  {
    std::ofstream out(dir / "huge.bin", std::ios::binary);
    const unsigned char len[8] = {0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(len), 8);
    out << "{}";
  }
  CHECK_THROWS_AS(read_tensor_file(dir / "huge.bin"), LoadError);
  {
    std::ofstream out(dir / "badjson.bin", std::ios::binary);
    const unsigned char len[8] = {3, 0, 0, 0, 0, 0, 0, 0};
    out.write(reinterpret_cast<const char*>(len), 8);
    out << "{{{";
  }
  CHECK_THROWS_AS(read_tensor_file(dir / "badjson.bin"), LoadError);
  CHECK_THROWS_AS(read_tensor_file(dir / "absent.bin"), LoadError);
}

TEST_CASE("parameter loading reports every mismatch at once") {
  Parameter a("x.weight", {2, 2}, 2, 2), b("x.bias", {2}, 1, 2), c("y", {3}, 1, 3);
  a.value << 1, 2, 3, 4;
  TensorFile f;
  store_parameters(f, {&a, &b}, "m.");
  CHECK(f.contains("m.x.weight"));

  Parameter a2("x.weight", {2, 2}, 2, 2), b2("x.bias", {2}, 1, 2);
  load_parameters(f, {&a2, &b2}, "m.");
  CHECK(a2.value == a.value);

  Parameter wrong("x.bias", {3}, 1, 3);
  try {
    load_parameters(f, {&wrong, &c}, "m.");
    FAIL("expected IncompatibleCheckpointError");
  } catch (const IncompatibleCheckpointError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("m.x.bias") != std::string::npos);
    CHECK(msg.find("m.y") != std::string::npos);
  }
}
