#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "utt/data.hpp"
#include "utt/errors.hpp"

namespace utt {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  return p;
}

SceneSpec scripted_scene(std::vector<ObjectSpec> objects, int frames) {
  SceneSpec s;
  s.canvas_width = 96;
  s.canvas_height = 64;
  s.velocity_jitter = 0.0;
  s.frames = frames;
  s.scripted = std::move(objects);
  return s;
}

TEST(Generator, SameSeedIsBitIdentical) {
  SceneSpec s;
  s.seed = 42;
  const auto a = generate_sequence(s), b = generate_sequence(s);
  ASSERT_EQ(a.length(), b.length());
  for (int f = 0; f < a.length(); ++f) EXPECT_EQ(a.frames[static_cast<std::size_t>(f)], b.frames[static_cast<std::size_t>(f)]);
  EXPECT_EQ(format_results(a.gt), format_results(b.gt));
  s.seed = 43;
  EXPECT_NE(format_results(generate_sequence(s).gt), format_results(a.gt));
}

TEST(Generator, StaticObjectKeepsItsBox) {
  ObjectSpec o;
  o.x = 20;
  o.y = 10;
  const auto seq = generate_sequence(scripted_scene({o}, 8));
  for (int f = 0; f < seq.length(); ++f) EXPECT_EQ(*seq.box_of(1, f), make_box(20, 10, 36, 26));
  // Nothing moves, so every frame renders identically.
  for (int f = 1; f < seq.length(); ++f) EXPECT_EQ(seq.frames[static_cast<std::size_t>(f)], seq.frames[0]);
}

TEST(Generator, ConstantVelocityIsArithmetic) {
  ObjectSpec o;
  o.x = 4;
  o.y = 10;
  o.vx = 2;
  const auto seq = generate_sequence(scripted_scene({o}, 10));
  for (int f = 0; f < seq.length(); ++f) {
    const Box b = *seq.box_of(1, f);
    EXPECT_DOUBLE_EQ(b(0), 4.0 + 2.0 * f);
    EXPECT_DOUBLE_EQ(b(1), 10.0);
  }
}

TEST(Generator, SpawnScheduleAndTargetPresence) {
  ObjectSpec target, late;
  target.x = 2;
  late.x = 60;
  late.spawn = 3;
  late.despawn = 6;
  const auto seq = generate_sequence(scripted_scene({target, late}, 8));
  for (int f = 0; f < 8; ++f) {
    EXPECT_TRUE(seq.box_of(1, f).has_value());
    EXPECT_EQ(seq.box_of(2, f).has_value(), f >= 3 && f < 6) << f;
  }
  EXPECT_EQ(seq.sot_target, 1);
  EXPECT_EQ(seq.ids(), (std::vector<int>{1, 2}));
}

TEST(Generator, RandomScenesRespectCanvasAndIds) {
  SceneSpec s;
  s.seed = 7;
  for (const auto& seq : generate_dataset(s, 6)) {
    EXPECT_EQ(static_cast<int>(seq.gt.size()), seq.length());
    for (int f = 0; f < seq.length(); ++f) {
      std::set<int> ids;
      for (const auto& a : seq.gt[static_cast<std::size_t>(f)]) {
        EXPECT_TRUE(ids.insert(a.id).second);
        EXPECT_GE(a.box(0), 0.0);
        EXPECT_GE(a.box(1), 0.0);
        EXPECT_LE(a.box(2), seq.width);
        EXPECT_LE(a.box(3), seq.height);
        EXPECT_LT(a.box(0), a.box(2));
      }
      EXPECT_TRUE(seq.box_of(seq.sot_target, f).has_value());
    }
  }
}

TEST(Generator, ImpossibleSpecsAreRejected) {
  SceneSpec s;
  s.min_size = 200;
  s.max_size = 220;
  EXPECT_THROW(generate_sequence(s), SpecError);
  s = SceneSpec{};
  s.min_objects = 5;
  s.max_objects = 2;
  EXPECT_THROW(generate_sequence(s), SpecError);
  s = SceneSpec{};
  s.min_objects = s.max_objects = 400;
  EXPECT_THROW(generate_sequence(s), SpecError);
  EXPECT_THROW(parse_shape("hexagon"), FormatError);
  EXPECT_EQ(parse_shape(shape_name(Shape::kBlob)), Shape::kBlob);
}

TEST(Codec, ParsesCornerConversion) {
  const auto gt = parse_annotations("1,7,10,20,30,40,1,-1,-1,-1\n");
  ASSERT_EQ(gt.size(), 1u);
  ASSERT_EQ(gt[0].size(), 1u);
  EXPECT_EQ(gt[0][0].id, 7);
  EXPECT_EQ(gt[0][0].box, make_box(10, 20, 40, 60));
}

TEST(Codec, ResultRoundTrip) {
  SequenceAnnotations res(3);
  for (int f = 0; f < 3; ++f) {
    for (int id : {1, 2}) {
      Annotation a;
      a.id = id;
      a.box = make_box(1.25 * f + id, 2.5, 10.125 + f, 20.0 + id);
      a.score = 0.5 + 0.125 * id;
      res[static_cast<std::size_t>(f)].push_back(a);
    }
  }
  const auto path = scratch("codec") / "res.txt";
  fs::create_directories(path.parent_path());
  write_results(path.string(), res);
  const auto back = read_annotations(path.string());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t f = 0; f < 3; ++f) {
    ASSERT_EQ(back[f].size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(back[f][k].id, res[f][k].id);
      EXPECT_LT((back[f][k].box - res[f][k].box).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_NEAR(back[f][k].score, res[f][k].score, 1e-6);
    }
  }
  EXPECT_EQ(format_results(back), format_results(res));
}

TEST(Codec, MalformedLinesReportTheirNumber) {
  try {
    parse_annotations("1,1,0,0,5,5,1,1,1\n\n2,1,abc,0,5,5\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_annotations("1,2,3\n"), ParseError);
  EXPECT_THROW(parse_annotations("0,1,0,0,5,5\n"), ParseError);
  EXPECT_THROW(parse_annotations("1,1,0,0,-5,5\n"), ParseError);
}

TEST(Codec, SotResultsRoundTrip) {
  const std::vector<Box> boxes{make_box(1, 2, 11, 22), make_box(3.5, 4.25, 9, 10)};
  const auto path = scratch("sot_codec");
  fs::create_directories(path);
  write_sot_results((path / "s.txt").string(), boxes);
  const auto back = read_sot_results((path / "s.txt").string());
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_LT((back[i] - boxes[i]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Storage, SequenceAndDatasetRoundTrip) {
  SceneSpec s;
  s.seed = 3;
  s.frames = 4;
  const auto seqs = generate_dataset(s, 2);
  const auto dir = scratch("dataset");
  std::vector<std::string> names;
  for (const auto& seq : seqs) {
    save_sequence(dir / seq.name, seq);
    names.push_back(seq.name);
  }
  write_dataset_manifest(dir, names);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].name, seqs[i].name);
    EXPECT_EQ(back[i].sot_target, seqs[i].sot_target);
    EXPECT_EQ(back[i].length(), seqs[i].length());
    EXPECT_EQ(format_results(back[i].gt), format_results(seqs[i].gt));
    // PNG is 8-bit: pixels agree to quantization.
    for (std::size_t f = 0; f < seqs[i].frames.size(); ++f) {
      const auto& a = seqs[i].frames[f].data;
      const auto& b = back[i].frames[f].data;
      ASSERT_EQ(a.size(), b.size());
      float worst = 0;
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
      EXPECT_LE(worst, 0.5F / 255.0F + 1e-6F);
    }
  }
  EXPECT_THROW(load_dataset(scratch("missing")), std::runtime_error);
}

}  // namespace
}  // namespace utt
