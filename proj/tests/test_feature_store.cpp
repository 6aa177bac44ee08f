#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "pmce/binary_io.hpp"
#include "pmce/error.hpp"
#include "pmce/feature_store.hpp"
#include "test_util.hpp"

using namespace pmce;
using pmce::testing::TempDir;
using pmce::testing::vecf;
namespace fs = std::filesystem;

namespace {

DatasetSplit tiny_split() {
  DatasetSplit s;
  s.name = "base";
  s.class_names = {"robin"};
  s.name_embs.resize(1, 2);
  s.name_embs << 0.5f, -0.25f;
  s.records.push_back({0, vecf({1.0f, 2.0f}), vecf({3.0f, 4.0f})});
  return s;
}

nlohmann::json load_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void save_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::trunc);
  out << j.dump(2);
}

}  // namespace

TEST_CASE("fnv1a64 known vectors") {
  CHECK(fnv1a64_hex(Bytes{}) == "cbf29ce484222325");
  const Bytes a{std::byte{'a'}};
  CHECK(fnv1a64_hex(a) == "af63dc4c8601ec8c");
  const std::string foobar = "foobar";
  Bytes fb(foobar.size());
  std::memcpy(fb.data(), foobar.data(), fb.size());
  CHECK(fnv1a64_hex(fb) == "85944171f73967e8");
}

TEST_CASE("one record with d_v=2, d_t=2 occupies 20 bytes") {
  TempDir dir;
  const DatasetSplit splits[] = {tiny_split()};
  write_store(splits, dir.path());
  CHECK(fs::file_size(dir / "base.records") == 20);
  CHECK(fs::file_size(dir / "base.names") == 8);

  // u32 id then little-endian f32s
  const auto raw = read_file(dir / "base.records");
  ByteReader r(raw, "records");
  CHECK(r.get_u32() == 0u);
  CHECK(r.get_f32() == 1.0f);
  CHECK(r.get_f32() == 2.0f);
  CHECK(r.get_f32() == 3.0f);
  CHECK(r.get_f32() == 4.0f);
}

TEST_CASE("write then read is bitwise identical") {
  TempDir dir;
  const DatasetSplit splits[] = {testing::random_split("base", 4, 3, 5, 3, 1),
                                 testing::random_split("novel", 2, 6, 5, 3, 2)};
  const auto manifest = write_store(splits, dir.path());
  const auto store = read_store(dir.path());
  CHECK(store.manifest == manifest);
  CHECK(store.split("base") == splits[0]);
  CHECK(store.split("novel") == splits[1]);
  CHECK_FALSE(store.has_split("validation"));
  CHECK_THROWS_AS(store.split("validation"), InvalidArgument);
  CHECK(manifest.splits.at("base").num_records == 12);
}

TEST_CASE("splits with different visual dims are rejected") {
  TempDir dir;
  const DatasetSplit splits[] = {testing::random_split("base", 2, 2, 2, 3, 1),
                                 testing::random_split("novel", 2, 2, 3, 3, 2)};
  CHECK_THROWS_AS(write_store(splits, dir.path()), DimensionError);
}

TEST_CASE("a single corrupted byte is a checksum error") {
  TempDir dir;
  const DatasetSplit splits[] = {testing::random_split("base", 3, 4, 4, 2, 3)};
  write_store(splits, dir.path());
  auto raw = read_file(dir / "base.records");
  raw[7] ^= std::byte{0x01};
  write_file(dir / "base.records", raw);
  CHECK_THROWS_AS(read_store(dir.path()), ChecksumError);
}

TEST_CASE("unknown manifest version") {
  TempDir dir;
  const DatasetSplit splits[] = {tiny_split()};
  write_store(splits, dir.path());
  auto j = load_json(dir / "manifest.json");
  j["version"] = 999;
  save_json(dir / "manifest.json", j);
  CHECK_THROWS_WITH_AS(read_store(dir.path()), doctest::Contains("version"), FormatError);
}

TEST_CASE("truncated records file") {
  TempDir dir;
  const DatasetSplit splits[] = {testing::random_split("base", 2, 2, 3, 2, 4)};
  write_store(splits, dir.path());
  auto raw = read_file(dir / "base.records");
  raw.resize(raw.size() - 3);
  write_file(dir / "base.records", raw);
  auto j = load_json(dir / "manifest.json");
  j["splits"]["base"]["records_fnv1a"] = fnv1a64_hex(raw);
  save_json(dir / "manifest.json", j);
  CHECK_THROWS_AS(read_store(dir.path()), FormatError);
}

TEST_CASE("NaN in a record is reported with its index") {
  TempDir dir;
  const DatasetSplit splits[] = {testing::random_split("base", 2, 3, 3, 2, 5)};
  write_store(splits, dir.path());
  auto raw = read_file(dir / "base.records");
  const std::size_t stride = 4 + 4 * (3 + 2);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(raw.data() + 4 * stride + 4 + 4, &nan, 4);  // record 4, visual[1]
  write_file(dir / "base.records", raw);
  auto j = load_json(dir / "manifest.json");
  j["splits"]["base"]["records_fnv1a"] = fnv1a64_hex(raw);
  save_json(dir / "manifest.json", j);
  CHECK_THROWS_WITH_AS(read_store(dir.path()), doctest::Contains("record 4"), NumericError);
}

TEST_CASE("split validation") {
  auto s = tiny_split();
  CHECK_NOTHROW(s.validate());

  auto bad_id = s;
  bad_id.records[0].class_id = 1;
  CHECK_THROWS_AS(bad_id.validate(), InvalidArgument);

  auto bad_dim = s;
  bad_dim.records.push_back({0, vecf({1.0f, 2.0f, 3.0f}), vecf({3.0f, 4.0f})});
  CHECK_THROWS_AS(bad_dim.validate(), DimensionError);

  auto empty_class = s;
  empty_class.class_names.push_back("wren");
  empty_class.name_embs.conservativeResize(2, 2);
  empty_class.name_embs.row(1).setZero();
  CHECK_THROWS_AS(empty_class.validate(), InvalidArgument);

  auto bad_name = s;
  bad_name.name = "train";
  CHECK_THROWS_AS(bad_name.validate(), InvalidArgument);

  auto inf = s;
  inf.records[0].caption_emb(1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(inf.validate(), NumericError);
}

TEST_CASE("missing store directory") {
  TempDir dir;
  CHECK_THROWS_AS(read_store(dir / "absent"), IoError);
}

TEST_CASE("byte reader reports truncation") {
  ByteWriter w;
  w.put_u32(7);
  w.put_f64(2.5);
  const auto bytes = w.take();
  ByteReader r(bytes, "buf");
  CHECK(r.get_u32() == 7u);
  CHECK(r.get_f64() == 2.5);
  CHECK_THROWS_AS(r.get_u32(), FormatError);
}
