#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "avi/geometry.hpp"
#include "avi/io.hpp"

using namespace avi;
namespace fs = std::filesystem;

TEST_CASE("token streams round trip and accept comments") {
  const std::vector<std::int64_t> ids = {0, 5, 32895, 9007199254740993LL};
  CHECK(io::parse_token_stream(io::format_token_stream(ids)) == ids);
  CHECK(io::parse_token_stream("# header\n3\n  4\n\n5 # trailing\n") == std::vector<std::int64_t>{3, 4, 5});
  CHECK_THROWS_AS(io::parse_token_stream("3\nx\n"), Error);
  CHECK_THROWS_AS(io::parse_token_stream("-1\n"), Error);
}

TEST_CASE("token blocks split on blank lines") {
  const auto blocks = io::parse_token_blocks("1\n2\n\n3\n\n\n4\n5\n");
  REQUIRE(blocks.size() == 3);
  CHECK(blocks[0] == std::vector<std::int64_t>{1, 2});
  CHECK(blocks[1] == std::vector<std::int64_t>{3});
  CHECK(blocks[2] == std::vector<std::int64_t>{4, 5});
}

TEST_CASE("atomic writes replace the target and leave no temp file") {
  const fs::path dir = fs::temp_directory_path() / "avi_io_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto path = (dir / "out.txt").string();
  io::write_atomic(path, std::string("first"));
  io::write_atomic(path, std::string("second"));
  CHECK(io::read_text(path) == "second");
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  CHECK_THROWS_AS(io::read_text((dir / "missing").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("little-endian packing") {
  std::vector<std::uint8_t> out;
  io::put_u32(out, 0x01020304u);
  CHECK(out == std::vector<std::uint8_t>{4, 3, 2, 1});
  CHECK(io::get_u32(out, 0) == 0x01020304u);
  CHECK_THROWS_AS(io::get_u32(out, 1), Error);
}
