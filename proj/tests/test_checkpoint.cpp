#include <cstring>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "lsre/checkpoint.hpp"
#include "lsre/world_model.hpp"

using namespace lsre;

namespace {

std::vector<const ParamBlock*> const_blocks(const ParamRefs& p) { return {p.begin(), p.end()}; }

std::string what_of(std::string_view bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamBlock a("a.w0", {2, 3}), b("b", {1});
  a.values = {1.0, -2.5, 3e-300, 1e300, -0.0, 0.1};
  b.values = {42.0};
  const std::string bytes = encode_checkpoint({&a, &b});
  EXPECT_EQ(bytes.substr(0, 12), "LSRE-CKPT-v1");
  const auto out = decode_checkpoint(bytes);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out.at("a.w0").shape, (std::vector<std::size_t>{2, 3}));
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(std::memcmp(&out.at("a.w0").values[i], &a.values[i], sizeof(double)), 0);
  EXPECT_EQ(out.at("b").values, Vec{42.0});
}

TEST(Checkpoint, LittleEndianLayout) {
  ParamBlock a("x", {1});
  a.values = {1.0};
  const std::string bytes = encode_checkpoint({&a});
  // magic(12) count(8) namelen(8) name(1) rank(8) dim(8) value(8)
  ASSERT_EQ(bytes.size(), 12u + 8 + 8 + 1 + 8 + 8 + 8);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1u);  // block count, low byte first
  const std::string value = bytes.substr(bytes.size() - 8);
  EXPECT_EQ(static_cast<unsigned char>(value[7]), 0x3Fu);  // 1.0 = 0x3FF0000000000000
  EXPECT_EQ(static_cast<unsigned char>(value[6]), 0xF0u);
}

TEST(Checkpoint, CorruptedMagicNamesOffset) {
  ParamBlock a("x", {1});
  std::string bytes = encode_checkpoint({&a});
  bytes[5] = 'X';
  const std::string msg = what_of(bytes);
  EXPECT_NE(msg.find("magic"), std::string::npos);
  EXPECT_NE(msg.find("offset 5"), std::string::npos) << msg;
}

TEST(Checkpoint, TruncationNamesOffset) {
  ParamBlock a("x", {4});
  const std::string bytes = encode_checkpoint({&a});
  const std::string msg = what_of(std::string_view(bytes).substr(0, bytes.size() - 3));
  EXPECT_NE(msg.find("truncated at offset"), std::string::npos) << msg;
}

TEST(Checkpoint, TrailingBytesRejected) {
  ParamBlock a("x", {1});
  const std::string msg = what_of(encode_checkpoint({&a}) + "junk");
  EXPECT_NE(msg.find("trailing bytes"), std::string::npos) << msg;
}

TEST(Checkpoint, LoadBlocksChecksNamesAndShapes) {
  WorldModelDims d;
  d.dh = 4;
  d.dz = 2;
  d.hidden = 4;
  d.embed = 3;
  WorldModel src(d, 1), dst(d, 2);
  const auto blocks = decode_checkpoint(encode_checkpoint(const_blocks(src.params())));
  load_blocks(blocks, dst.params());
  const auto ps = src.params(), pd = dst.params();
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i]->values, pd[i]->values);

  WorldModelDims bigger = d;
  bigger.dh = 5;
  WorldModel other(bigger, 3);
  EXPECT_THROW(load_blocks(blocks, other.params()), FormatError);
  ParamBlock stray("not.there", {1});
  EXPECT_THROW(load_blocks(blocks, {&stray}), FormatError);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "lsre_ckpt_test";
  std::filesystem::create_directories(dir);
  ParamBlock a("w", {2});
  a.values = {0.5, -0.25};
  write_checkpoint((dir / "m.ckpt").string(), {&a});
  EXPECT_EQ(read_checkpoint((dir / "m.ckpt").string()).at("w").values, a.values);
  EXPECT_THROW(read_checkpoint((dir / "absent.ckpt").string()), IoError);
  std::filesystem::remove_all(dir);
}
