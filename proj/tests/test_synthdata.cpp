#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "mpnflow/error.hpp"
#include "mpnflow/synthdata.hpp"

using namespace mpnflow;
using testutil::fresh_dir;
using testutil::read_file;
using testutil::write_file;

TEST_CASE("one identity without noise gives one full trajectory") {
  ScenarioConfig c;
  c.num_frames = 3;
  c.num_identities = 1;
  Scenario s = generate_scenario(c);
  REQUIRE(s.detections.size() == 3);
  REQUIRE(s.gt_trajectories.size() == 1);
  CHECK(s.gt_trajectories.begin()->second.size() == 3);
  for (int f = 0; f < 3; ++f) CHECK(s.detections[f].frame == f + 1);
}

TEST_CASE("full dropout removes every true detection") {
  ScenarioConfig c;
  c.detection_dropout = 1.0;
  Scenario s = generate_scenario(c);
  CHECK(s.detections.empty());
  CHECK(s.truth.size() == std::size_t(c.num_frames * c.num_identities));
}

TEST_CASE("generation is a pure function of the config") {
  ScenarioConfig c;
  c.detection_dropout = 0.2;
  c.false_positive_rate = 0.5;
  c.box_jitter_std = 1.5;
  c.seed = 11;
  CHECK(generate_scenario(c) == generate_scenario(c));
  ScenarioConfig d = c;
  d.seed = 12;
  CHECK_FALSE(generate_scenario(c) == generate_scenario(d));
}

TEST_CASE("trajectories are strictly frame ordered") {
  ScenarioConfig c;
  c.num_identities = 6;
  c.detection_dropout = 0.3;
  c.seed = 5;
  Scenario s = generate_scenario(c);
  for (const auto& [id, nodes] : s.gt_trajectories) {
    for (std::size_t k = 1; k < nodes.size(); ++k) {
      CHECK(s.detections[nodes[k - 1]].frame < s.detections[nodes[k]].frame);
    }
  }
}

TEST_CASE("frame stride keeps original frame numbers") {
  ScenarioConfig c;
  c.num_frames = 10;
  c.num_identities = 2;
  c.frame_stride = 3;
  Scenario s = generate_scenario(c);
  for (const auto& d : s.detections) CHECK((d.frame - 1) % 3 == 0);
  CHECK(s.detections.size() == 8);

  ScenarioConfig full = c;
  full.frame_stride = 1;
  Scenario f = generate_scenario(full);
  for (const auto& t : s.truth) {
    auto it = std::find_if(f.truth.begin(), f.truth.end(), [&](const TruthBox& u) {
      return u.frame == t.frame && u.identity == t.identity;
    });
    REQUIRE(it != f.truth.end());
    CHECK(it->box == t.box);
  }
}

TEST_CASE("invalid scenario configs are rejected") {
  ScenarioConfig c;
  c.num_frames = 0;
  CHECK_THROWS_AS(generate_scenario(c), ConfigError);
  c = {};
  c.detection_dropout = 1.5;
  CHECK_THROWS_AS(generate_scenario(c), ConfigError);
}

TEST_CASE("ground-truth masks render the object shape inside the detection box") {
  ScenarioConfig c;
  c.num_identities = 3;
  c.num_frames = 4;
  Scenario s = generate_scenario(c);
  for (const auto& d : s.detections) {
    REQUIRE(d.gt_mask.has_value());
    CHECK(d.gt_mask->height == std::size_t(c.roi_height));
    CHECK(d.gt_mask->width == std::size_t(c.roi_width));
    for (double v : d.gt_mask->data) CHECK((v == 0.0 || v == 1.0));
    CHECK(d.roi_grid.channels == std::size_t(c.roi_channels));
  }
  Grid full = render_shape(ShapeKind::rectangle, {0, 0, 10, 10}, {3, 2, 4, 6}, 4, 4);
  for (double v : full.data) CHECK(v == 1.0);
  Grid none = render_shape(ShapeKind::ellipse, {0, 0, 10, 10}, {50, 50, 4, 4}, 4, 4);
  for (double v : none.data) CHECK(v == 0.0);
}

TEST_CASE("detection file parsing") {
  auto dir = fresh_dir("parse");
  write_file(dir / "a.txt", "1,-1,10,20,30,60,0.9\n");
  auto d = load_mot_detections(dir / "a.txt");
  REQUIRE(d.size() == 1);
  CHECK(d[0].frame == 1);
  CHECK(d[0].node_id == 0);
  CHECK(d[0].box == Box{10, 20, 30, 60});
  CHECK(d[0].confidence == doctest::Approx(0.9));
  CHECK_FALSE(d[0].gt_identity.has_value());

  write_file(dir / "empty.txt", "");
  CHECK(load_mot_detections(dir / "empty.txt").empty());

  write_file(dir / "zero.txt", "1,-1,10,20,0,60,0.9\n");
  CHECK_THROWS_AS(load_mot_detections(dir / "zero.txt"), ParseError);
  write_file(dir / "junk.txt", "1,-1,10,abc,5,60,0.9\n");
  try {
    load_mot_detections(dir / "junk.txt");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  CHECK_THROWS_AS(load_mot_detections(dir / "missing.txt"), IoError);
}

TEST_CASE("embedding attachment") {
  auto dir = fresh_dir("emb");
  write_file(dir / "det.txt", "1,-1,0,0,5,5,1\n2,-1,0,0,5,5,1\n3,-1,0,0,5,5,1\n");
  auto dets = load_mot_detections(dir / "det.txt");
  write_file(dir / "e.csv", "0,1,2\n1,3,4\n2,5,6\n");
  attach_embeddings(dets, dir / "e.csv");
  CHECK(dets[2].appearance == std::vector<double>{5, 6});

  write_file(dir / "missing.csv", "0,1,2\n2,5,6\n");
  try {
    attach_embeddings(dets, dir / "missing.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("node_id 1") != std::string::npos);
  }
  std::string mixed = "0";
  for (int i = 0; i < 32; ++i) mixed += ",0.5";
  mixed += "\n1";
  for (int i = 0; i < 16; ++i) mixed += ",0.5";
  mixed += "\n2,1\n";
  write_file(dir / "mixed.csv", mixed);
  CHECK_THROWS_WITH_AS(attach_embeddings(dets, dir / "mixed.csv"),
                       doctest::Contains("dimension"), ParseError);
}

TEST_CASE("result writing") {
  auto dir = fresh_dir("results");
  TrackSequence a{{1, {1, 2, 3, 4}}, {2, {2, 2, 3, 4}}};
  write_results({a}, dir / "one.txt");
  auto one = load_labeled_boxes(dir / "one.txt");
  REQUIRE(one.size() == 2);
  CHECK(one[0].id == one[1].id);
  CHECK(one[0].id == 1);

  write_results({}, dir / "none.txt");
  CHECK(read_file(dir / "none.txt").empty());

  TrackSequence b{{2, {7, 7, 3, 4}}, {3, {8, 7, 3, 4}}};
  TrackSequence c{{1, {0.123456, 9.87654, 3.333333, 4}}};
  write_results({b, c}, dir / "two.txt");
  auto two = load_labeled_boxes(dir / "two.txt");
  REQUIRE(two.size() == 3);
  CHECK(two[0].frame == 1);
  CHECK(two[0].id == 1);
  CHECK(two[1].id == 2);
  CHECK(two[0].box.x == doctest::Approx(0.12).epsilon(1e-12));
  CHECK(std::abs(two[0].box.y - 9.87654) <= 0.005);
  CHECK(std::abs(two[0].box.w - 3.333333) <= 0.005);

  write_results({b, c}, dir / "min.txt", 2);
  auto min2 = load_labeled_boxes(dir / "min.txt");
  CHECK(min2.size() == 2);
}

TEST_CASE("scenario directories reload losslessly") {
  ScenarioConfig c;
  c.num_identities = 3;
  c.num_frames = 8;
  c.detection_dropout = 0.2;
  c.false_positive_rate = 0.5;
  c.box_jitter_std = 2.0;
  c.seed = 4;
  Scenario s = generate_scenario(c);
  auto dir = fresh_dir("scenario");
  save_scenario_dir(s, dir);
  Scenario r = load_scenario_dir(dir);
  CHECK(r == s);
  CHECK_THROWS_AS(load_scenario_dir(dir / "nope"), IoError);
}
