#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "emoformer/emof.hpp"
#include "emoformer/errors.hpp"
#include "support/test_support.hpp"

using namespace emoformer;

namespace {

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("single arrays survive a write/read round trip exactly") {
  testing::TempDir dir("emof_array");
  emof::Array array;
  array.dims = {3, 4};
  array.data = {0.0f, -1.5f, 3.25f, 1e-20f, 1e20f, 42.0f,
                -0.0f, 7.0f, 8.0f, 9.0f, 10.0f, 11.5f};
  const std::string path = dir.file("a.emof");
  emof::write_array(path, array);

  emof::Array back = emof::read_array(path);
  CHECK(back.dims == array.dims);
  CHECK(back.data == array.data);
  CHECK(back.numel() == 12);
}

TEST_CASE("zero-size and rank-1 arrays round trip") {
  testing::TempDir dir("emof_edge");

  emof::Array flat;
  flat.dims = {5};
  flat.data = {1, 2, 3, 4, 5};
  emof::write_array(dir.file("flat.emof"), flat);
  emof::Array flat_back = emof::read_array(dir.file("flat.emof"));
  CHECK(flat_back.dims == flat.dims);
  CHECK(flat_back.data == flat.data);

  emof::Array empty;
  empty.dims = {0};
  emof::write_array(dir.file("empty.emof"), empty);
  CHECK(emof::read_array(dir.file("empty.emof")).data.empty());
}

TEST_CASE("write_array rejects dims/payload mismatches") {
  testing::TempDir dir("emof_guard");
  emof::Array bad;
  bad.dims = {2, 2};
  bad.data = {1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS(emof::write_array(dir.file("bad.emof"), bad),
                  ValidationError);
}

TEST_CASE("named tables preserve insertion order and payloads") {
  testing::TempDir dir("emof_named");
  emof::NamedArrays table;
  table.json_header = R"({"kind":"test","layers":2})";
  table.add("zulu", emof::Array{{2}, {1.0f, 2.0f}});
  table.add("alpha", emof::Array{{1, 3}, {4.0f, 5.0f, 6.0f}});
  table.add("mid", emof::Array{{2, 2}, {7, 8, 9, 10}});

  const std::string path = dir.file("table.emof");
  emof::write_named(path, table);
  emof::NamedArrays back = emof::read_named(path);

  CHECK(back.json_header == table.json_header);
  REQUIRE(back.arrays.size() == 3);
  CHECK(back.arrays[0].first == "zulu");
  CHECK(back.arrays[1].first == "alpha");
  CHECK(back.arrays[2].first == "mid");
  CHECK(back.at("alpha").dims == std::vector<uint32_t>{1, 3});
  CHECK(back.at("alpha").data == std::vector<float>{4.0f, 5.0f, 6.0f});
  CHECK(back.find("absent") == nullptr);
  CHECK_THROWS_AS(back.at("absent"), FormatError);
}

TEST_CASE("duplicate names in a table are rejected") {
  emof::NamedArrays table;
  table.add("w", emof::Array{{1}, {1.0f}});
  CHECK_THROWS_AS(table.add("w", emof::Array{{1}, {2.0f}}), ValidationError);
}

TEST_CASE("corrupt files raise format errors, missing files io errors") {
  testing::TempDir dir("emof_corrupt");

  SUBCASE("missing file") {
    CHECK_THROWS_AS(emof::read_array(dir.file("ghost.emof")), IoError);
    CHECK_THROWS_AS(emof::read_named(dir.file("ghost.emof")), IoError);
  }
  SUBCASE("wrong magic") {
    dump(dir.file("magic.emof"), {'N', 'O', 'P', 'E', 0, 0, 0, 0});
    CHECK_THROWS_AS(emof::read_array(dir.file("magic.emof")), FormatError);
  }
  SUBCASE("truncated header") {
    dump(dir.file("short.emof"), {'E', 'M', 'O'});
    CHECK_THROWS_AS(emof::read_array(dir.file("short.emof")), FormatError);
  }
  SUBCASE("truncated payload") {
    emof::Array array;
    array.dims = {4};
    array.data = {1, 2, 3, 4};
    const std::string path = dir.file("cut.emof");
    emof::write_array(path, array);
    std::vector<char> bytes = slurp(path);
    bytes.resize(bytes.size() - 6);
    dump(path, bytes);
    CHECK_THROWS_AS(emof::read_array(path), FormatError);
  }
  SUBCASE("trailing garbage") {
    emof::Array array;
    array.dims = {2};
    array.data = {1, 2};
    const std::string path = dir.file("tail.emof");
    emof::write_array(path, array);
    std::vector<char> bytes = slurp(path);
    bytes.push_back('x');
    dump(path, bytes);
    CHECK_THROWS_AS(emof::read_array(path), FormatError);
  }
  SUBCASE("array file read as a named table and vice versa") {
    emof::Array array;
    array.dims = {2};
    array.data = {1, 2};
    emof::write_array(dir.file("plain.emof"), array);
    CHECK_THROWS_AS(emof::read_named(dir.file("plain.emof")), FormatError);

    emof::NamedArrays table;
    table.json_header = "{}";
    table.add("w", emof::Array{{1}, {1.0f}});
    emof::write_named(dir.file("table.emof"), table);
    CHECK_THROWS_AS(emof::read_array(dir.file("table.emof")), FormatError);
  }
}
