#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "fpc/binary_io.hpp"
#include "fpc/gallery.hpp"
#include "fpc/image_io.hpp"
#include "fpc/model_io.hpp"

using namespace fpc;
using namespace fpc::testing;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Rgb8Image pattern(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  Rgb8Image img{h, w, std::vector<std::uint8_t>(h * w * 3)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
  return img;
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Ppm, RoundTrip) {
  const Rgb8Image img = pattern(5, 7, 1);
  const std::string enc = encode_ppm(img);
  EXPECT_EQ(enc.substr(0, 11), "P6\n7 5\n255\n");
  EXPECT_EQ(decode_ppm(bytes_of(enc)), img);
}

TEST(Ppm, HeaderCommentsAccepted) {
  const std::string s = std::string("P6\n# made by hand\n2 1\n# max\n255\n") + "abcdef";
  const Rgb8Image img = decode_ppm(bytes_of(s));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.pixels[0], 'a');
}

TEST(Ppm, RejectsOtherVariants) {
  EXPECT_THROW(decode_ppm(bytes_of("P3\n1 1\n255\n0 0 0\n")), FormatError);
  EXPECT_THROW(decode_ppm(bytes_of("P6\n1 1\n65535\n\0\0\0\0\0\0")), FormatError);
  EXPECT_THROW(decode_ppm(bytes_of("")), FormatError);
  try {
    decode_ppm(bytes_of("P6\n2 2\n255\nabc"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 11u);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Resize, SameSizeIsPassthrough) {
  const Rgb8Image img = pattern(8, 6, 2);
  EXPECT_EQ(resize_bilinear(img, 8, 6), img);
}

TEST(Resize, HalvingAveragesTwoByTwoBlocks) {
  // With half-pixel centers a 2x downscale samples exactly between four pixels.
  const Rgb8Image img = pattern(4, 4, 3);
  const Rgb8Image out = resize_bilinear(img, 2, 2);
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](std::size_t yy, std::size_t xx) { return img.pixels[(yy * 4 + xx) * 3 + c]; };
        const int sum = px(2 * y, 2 * x) + px(2 * y, 2 * x + 1) + px(2 * y + 1, 2 * x) + px(2 * y + 1, 2 * x + 1);
        const int expected = (sum + 2) / 4;  // round half up
        EXPECT_EQ(out.pixels[(y * 2 + x) * 3 + c], expected) << y << "," << x << "," << c;
      }
}

TEST(Resize, UpscaledFileComesBackExactly) {
  const Rgb8Image small = pattern(256, 128, 4);
  Rgb8Image big{512, 256, std::vector<std::uint8_t>(512 * 256 * 3)};
  for (std::size_t y = 0; y < 512; ++y)
    for (std::size_t x = 0; x < 256; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        big.pixels[(y * 256 + x) * 3 + c] = small.pixels[((y / 2) * 128 + x / 2) * 3 + c];
  const std::string dir = temp_dir("resize");
  write_ppm(dir + "/big.ppm", big);
  EXPECT_EQ(load_image(dir + "/big.ppm", 256, 128), small);
}

TEST(Resize, ConstantImageStaysConstant) {
  Rgb8Image img{3, 5, std::vector<std::uint8_t>(45, 77)};
  const Rgb8Image out = resize_bilinear(img, 7, 2);
  for (auto p : out.pixels) EXPECT_EQ(p, 77);
}

TEST(FloatImage, NormalizesToUnitRange) {
  const Rgb8Image img{1, 1, {0, 255, 51}};
  const Image f = to_float_image(img);
  EXPECT_FLOAT_EQ(f.pixels[0], -1.0f);
  EXPECT_FLOAT_EQ(f.pixels[1], 1.0f);
  EXPECT_NEAR(f.pixels[2], -0.6f, 1e-6);
}

TEST(Metadata, MarketStyleNames) {
  auto m = parse_metadata("0001_c1s1_000151_00.ppm");
  EXPECT_EQ(m.person_id, 1u);
  EXPECT_EQ(m.camera_id, 0u);
  m = parse_metadata("/some/dir/0042_c3_x.ppm");
  EXPECT_EQ(m.person_id, 42u);
  EXPECT_EQ(m.camera_id, 2u);
  EXPECT_THROW(parse_metadata("image.ppm"), InputError);
  EXPECT_THROW(parse_metadata("0001_c0_x.ppm"), InputError);
  EXPECT_THROW(parse_metadata("99999999999999999999_c1_x.ppm"), InputError);
  EXPECT_NE(error_of([] { parse_metadata("image.ppm"); }).find("image.ppm"), std::string::npos);
}

TEST(WeightFile, RoundTripIsBitExact) {
  WeightFile f;
  f.add("a", Matrix(2, 3, {1, -2, 3.5f, 1e-30f, -0.0f, 7}));
  f.add("b", Vector{0.1f, 0.2f});
  f.add("scalar", {}, {42.0f});
  const std::string bytes = f.serialize();
  const WeightFile g = WeightFile::deserialize(bytes_of(bytes));
  EXPECT_EQ(g, f);
  EXPECT_EQ(g.serialize(), bytes);
  EXPECT_EQ(g.matrix("a"), f.matrix("a"));
  EXPECT_THROW(g.matrix("missing"), FormatError);
  EXPECT_THROW(g.matrix("b"), FormatError);
}

TEST(WeightFile, LittleEndianLayout) {
  WeightFile f;
  f.add("x", Vector{1.0f});
  const std::string s = f.serialize();
  const std::string expected_head("FPCW\x01\0\0\0\x01\0\0\0\x01\0\0\0x\x01\0\0\0\x01\0\0\0", 25);
  EXPECT_EQ(s.substr(0, 25), expected_head);
  EXPECT_EQ(s.substr(25), std::string("\0\0\x80\x3f", 4));
}

TEST(WeightFile, CorruptionRejected) {
  WeightFile f;
  f.add("x", Matrix(2, 2, 1.0f));
  const std::string good = f.serialize();

  std::string bad = good;
  bad[0] = 'X';
  EXPECT_NE(error_of([&] { WeightFile::deserialize(bytes_of(bad)); }).find("FPCW"), std::string::npos);

  bad = good;
  bad[4] = 2;
  try {
    WeightFile::deserialize(bytes_of(bad));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }

  EXPECT_THROW(WeightFile::deserialize(bytes_of(good.substr(0, good.size() - 1))), FormatError);
  EXPECT_THROW(WeightFile::deserialize(bytes_of(good + "z")), FormatError);
  EXPECT_THROW(WeightFile::deserialize(bytes_of(good.substr(0, 6))), FormatError);

  bad = good;
  bad[17] = 9;  // rank
  EXPECT_THROW(WeightFile::deserialize(bytes_of(bad)), FormatError);

  bad = good;
  bad[21] = '\xff';  // absurd dim
  bad[22] = '\xff';
  EXPECT_THROW(WeightFile::deserialize(bytes_of(bad)), FormatError);
}

TEST(Model, SaveLoadRoundTrip) {
  ModelConfig cfg;
  cfg.encoder = tiny_config();
  cfg.encoder.keep_rate = 0.7;
  cfg.encoder.strategy = DropStrategy::kSalient;
  cfg.encoder.camera_scale = 1.5f;
  cfg.decoder_heads = 4;
  cfg.decoder_mlp_dim = 24;
  cfg.num_classes = 7;
  const ModelBundle m = init_model(cfg, 3);
  const std::string dir = temp_dir("model");
  save_model(m, dir + "/w.fpcw");
  const ModelBundle back = load_model(dir + "/w.fpcw");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.config.encoder.keep_rate, 0.7);
  EXPECT_EQ(back.config.encoder.sparsify_layers, cfg.encoder.sparsify_layers);
  save_model(back, dir + "/w2.fpcw");
  EXPECT_EQ(binary::read_file(dir + "/w.fpcw"), binary::read_file(dir + "/w2.fpcw"));
}

TEST(Model, MismatchedTensorRejected) {
  ModelConfig cfg;
  cfg.encoder = tiny_config();
  cfg.decoder_heads = 2;
  cfg.decoder_mlp_dim = 8;
  cfg.num_classes = 3;
  WeightFile f = to_weight_file(init_model(cfg, 1));
  WeightFile g;
  for (const auto& t : f.tensors()) {
    if (t.name == "decoder.layer.mlp.b1") g.add(t.name, Vector(9, 0.0f));
    else g.add(t.name, t.dims, t.data);
  }
  EXPECT_THROW(from_weight_file(g), FormatError);
}

TEST(ModelConfig, JsonParsing) {
  const ModelConfig c = parse_model_config(R"({"embed_dim": 64, "heads": 4, "mlp_dim": 128,
      "decoder_heads": 4, "sparsify_layers": [2, 4], "keep_rate": 0.5, "strategy": "random"})");
  EXPECT_EQ(c.encoder.embed_dim, 64u);
  EXPECT_EQ(c.encoder.sparsify_layers, (std::set<std::size_t>{2, 4}));
  EXPECT_EQ(c.encoder.strategy, DropStrategy::kRandom);
  EXPECT_EQ(c.encoder.layers, 12u);
  EXPECT_THROW(parse_model_config(R"({"embed_dims": 64})"), ConfigError);
  EXPECT_THROW(parse_model_config(R"({"heads": "four"})"), ConfigError);
  EXPECT_THROW(parse_model_config("[1]"), ConfigError);
  EXPECT_THROW(parse_model_config("{"), ConfigError);
  EXPECT_THROW(parse_model_config(R"({"heads": 5})"), ConfigError);
  const ModelConfig again = parse_model_config(model_config_json(c));
  EXPECT_EQ(model_config_json(again), model_config_json(c));
}

TEST(Gallery, RoundTripAndIndex) {
  Rng rng(5);
  std::vector<GalleryRecord> recs;
  for (std::uint32_t i = 0; i < 5; ++i) recs.push_back({i % 2 + 7, i, random_vector(4, rng), random_matrix(3, 4, rng)});
  const GalleryMemory mem(4, 3, recs);
  EXPECT_EQ(mem.positions_of(7), (std::vector<std::size_t>{0, 2, 4}));
  EXPECT_TRUE(mem.positions_of(99).empty());
  const std::string dir = temp_dir("gallery");
  mem.save(dir + "/g.fpcg");
  const GalleryMemory back = GalleryMemory::load(dir + "/g.fpcg");
  EXPECT_EQ(back, mem);
  EXPECT_EQ(back.serialize(), mem.serialize());
}

TEST(Gallery, ValidatesRecords) {
  Rng rng(6);
  EXPECT_THROW(GalleryMemory(4, 3, {{1, 0, random_vector(5, rng), random_matrix(3, 4, rng)}}), ShapeError);
  EXPECT_THROW(GalleryMemory(4, 3, {{1, 0, random_vector(4, rng), random_matrix(2, 4, rng)}}), ShapeError);
  Vector nan_cls(4, 0.0f);
  nan_cls[1] = std::nanf("");
  EXPECT_THROW(GalleryMemory(4, 3, {{1, 0, nan_cls, random_matrix(3, 4, rng)}}), InputError);
}

TEST(Gallery, CorruptionRejected) {
  Rng rng(7);
  const GalleryMemory mem(2, 1, {{1, 0, random_vector(2, rng), random_matrix(1, 2, rng)}});
  const std::string good = mem.serialize();
  std::string bad = good;
  bad[3] = 'W';
  EXPECT_NE(error_of([&] { GalleryMemory::deserialize(bytes_of(bad)); }).find("FPCG"), std::string::npos);
  bad = good;
  bad[4] = 3;
  EXPECT_THROW(GalleryMemory::deserialize(bytes_of(bad)), FormatError);
  try {
    GalleryMemory::deserialize(bytes_of(good.substr(0, good.size() - 2)));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
  EXPECT_THROW(GalleryMemory::deserialize(bytes_of(good + "xxxx")), FormatError);
  EXPECT_THROW(GalleryMemory::load("/nonexistent/g.fpcg"), InputError);
}

TEST(Gallery, BuildUsesFullTokens) {
  EncoderConfig c = tiny_config();
  c.keep_rate = 0.5;
  const EncoderWeights w = init_encoder_weights(c, 2);
  Rng rng(8);
  std::vector<LabeledImage> imgs{{random_image(c, rng), 3, 1}, {random_image(c, rng), 4, 2}};
  const GalleryMemory mem = GalleryMemory::build(imgs, c, w);
  ASSERT_EQ(mem.size(), 2u);
  EXPECT_EQ(mem.patch_count(), c.patch_count());
  EXPECT_EQ(mem[1].person_id, 4u);
  EXPECT_EQ(mem[1].camera_id, 2u);
  EXPECT_EQ(mem[0].cls, encode_dense(imgs[0].image, 1, c, w).cls);
}
