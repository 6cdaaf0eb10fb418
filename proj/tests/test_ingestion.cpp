#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "salbfgs/ctr.hpp"
#include "salbfgs/hashing.hpp"
#include "salbfgs/model_io.hpp"
#include "salbfgs/rng.hpp"
#include "salbfgs/synth.hpp"
#include "salbfgs/text_format.hpp"

using Catch::Approx;
using namespace salbfgs;

namespace fs = std::filesystem;

TEST_CASE("format_double writes shortest round-trip text") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5) == "-2.5");
  CHECK(parse_double_strict(format_double(1e300), "t") == 1e300);
  const double awkward = 0.1 + 0.2;
  CHECK(parse_double_strict(format_double(awkward), "t") == awkward);
}

TEST_CASE("strict number parsing rejects trailing junk") {
  CHECK(parse_double_strict("3.5", "t") == 3.5);
  CHECK_THROWS_AS(parse_double_strict("3.5x", "t"), parse_error);
  CHECK_THROWS_AS(parse_double_strict("", "t"), parse_error);
  CHECK_THROWS_AS(parse_double_strict(" 1", "t"), parse_error);
  CHECK(parse_u32_strict("42", "t") == 42u);
  CHECK_THROWS_AS(parse_u32_strict("-1", "t"), parse_error);
  CHECK_THROWS_AS(parse_u32_strict("4e2", "t"), parse_error);
}

TEST_CASE("indexed line parsing") {
  const Example ex = parse_indexed_line("1 0:0.5 3:-2 17:1e-3");
  CHECK(ex.label == 1.0);
  REQUIRE(ex.features.entries.size() == 3);
  CHECK(ex.features.entries[0] == std::pair<std::uint32_t, double>{0, 0.5});
  CHECK(ex.features.entries[1] == std::pair<std::uint32_t, double>{3, -2.0});
  CHECK(ex.features.entries[2] == std::pair<std::uint32_t, double>{17, 1e-3});

  const Example bare = parse_indexed_line("0");
  CHECK(bare.label == 0.0);
  CHECK(bare.features.entries.empty());

  CHECK_THROWS_AS(parse_indexed_line(""), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("2 0:1"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 0:1 0:2"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 3:1 2:1"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 0:0"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 0:inf"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 0:"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 :5"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1  0:1"), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1 0:1 "), parse_error);
  CHECK_THROWS_AS(parse_indexed_line("1\t0:1"), parse_error);

  // Parse errors carry the line number.
  try {
    parse_indexed_line("x", 7);
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
}

TEST_CASE("serialize and parse round-trip examples exactly") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Example ex = testutil::random_example(rng, 40, 6);
    const Example back = parse_indexed_line(serialize_example(ex));
    CHECK(back.label == ex.label);
    REQUIRE(back.features.entries.size() == ex.features.entries.size());
    for (std::size_t i = 0; i < ex.features.entries.size(); ++i) {
      CHECK(back.features.entries[i].first == ex.features.entries[i].first);
      CHECK(back.features.entries[i].second == ex.features.entries[i].second);
    }
  }
}

TEST_CASE("batch files round-trip through the directory layout") {
  testutil::TempDir dir("ing1");
  CHECK(batch_file_name(0) == "batch_00000.txt");
  CHECK(batch_file_name(42) == "batch_00042.txt");

  Rng rng(4);
  Stream stream;
  for (std::size_t t = 0; t < 3; ++t)
    stream.batches.push_back(testutil::random_batch(rng, t, 20, 30, 5));
  write_stream(dir.path(), stream);

  const Stream back = read_batch_dir(dir.path());
  REQUIRE(back.batches.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(back.batches[t].time_index == t);
    REQUIRE(back.batches[t].examples.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(back.batches[t].examples[i].label ==
            stream.batches[t].examples[i].label);
      CHECK(back.batches[t].examples[i].features.entries ==
            stream.batches[t].examples[i].features.entries);
    }
  }
}

TEST_CASE("batch directory reading is strict") {
  testutil::TempDir dir("ing2");
  CHECK_THROWS_AS(read_batch_dir(dir.path() / "missing"), io_error);
  CHECK_THROWS_AS(read_batch_dir(dir.path()), io_error);  // no batch files

  Rng rng(4);
  Stream stream;
  for (std::size_t t = 0; t < 3; ++t)
    stream.batches.push_back(testutil::random_batch(rng, t, 5, 10, 3));
  write_stream(dir.path(), stream);
  fs::remove(dir.path() / "batch_00001.txt");
  CHECK_THROWS_AS(read_batch_dir(dir.path()), sequencing_error);

  testutil::TempDir dir2("ing3");
  write_batch_file(dir2.path() / "batch_00000.txt", stream.batches[0]);
  std::ofstream(dir2.path() / "batch_1.txt") << "1 0:1\n";
  CHECK_THROWS_AS(read_batch_dir(dir2.path()), sequencing_error);

  testutil::TempDir dir3("ing4");
  std::ofstream(dir3.path() / "batch_00000.txt") << "1 0:1\n\n1 1:1\n";
  CHECK_THROWS_AS(read_batch_dir(dir3.path()), parse_error);

  testutil::TempDir dir4("ing5");
  std::ofstream(dir4.path() / "batch_00000.txt") << "";
  CHECK_THROWS_AS(read_batch_dir(dir4.path()), parse_error);
}

TEST_CASE("model files round-trip and validate") {
  testutil::TempDir dir("ing6");
  const fs::path path = dir.path() / "model.txt";

  ParameterVector theta(6, 0.0);
  theta[1] = 0.5;
  theta[4] = -1.25e-7;
  write_model(path, theta, 18);

  const ModelFile model = read_model(path);
  CHECK(model.hash_bits == 18);
  REQUIRE(model.theta.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(model.theta[i] == theta[i]);

  // Zeros are omitted from the file body.
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "salbfgs-model v1 dim=6 bits=18");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);

  CHECK_THROWS_AS(read_model(dir.path() / "absent.txt"), io_error);
  std::ofstream(dir.path() / "bad1.txt") << "wrong header\n";
  CHECK_THROWS_AS(read_model(dir.path() / "bad1.txt"), parse_error);
  std::ofstream(dir.path() / "bad2.txt")
      << "salbfgs-model v1 dim=2 bits=0\n5 1.0\n";
  CHECK_THROWS_AS(read_model(dir.path() / "bad2.txt"), parse_error);
  std::ofstream(dir.path() / "bad3.txt")
      << "salbfgs-model v1 dim=3 bits=0\n1 1.0\n0 2.0\n";
  CHECK_THROWS_AS(read_model(dir.path() / "bad3.txt"), parse_error);
}

TEST_CASE("fnv1a64 matches the published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("feature hashing is separator-safe and in range") {
  HashConfig cfg;
  cfg.bits = 8;

  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const std::string token = "tok" + std::to_string(rng.below(100000));
    const std::uint32_t h = hash_feature("ns", token, cfg);
    CHECK(h < 256u);
    CHECK(hash_feature("ns", token, cfg) == h);
  }

  // Shifting bytes between namespace and token changes the key.
  CHECK(fnv1a64(std::string("ab") + '\x1f' + "c") !=
        fnv1a64(std::string("a") + '\x1f' + "bc"));

  // Conjunction keys cannot alias plain keys: they use a different separator.
  HashConfig wide;
  wide.bits = 30;
  CHECK(hash_feature("a", "b", wide) != hash_conjunction("a", "b", "a", "b", wide));

  CHECK_THROWS_AS(hash_feature("", "x", cfg), parse_error);
  CHECK_THROWS_AS(hash_feature("ns", "a b", cfg), parse_error);
  CHECK_THROWS_AS(hash_feature("n:s", "x", cfg), parse_error);
  CHECK_THROWS_AS(hash_feature("ns", "x|y", cfg), parse_error);
  HashConfig bad;
  bad.bits = 31;
  CHECK_THROWS_AS(hash_feature("ns", "x", bad), config_error);
  bad.bits = 7;
  CHECK_THROWS_AS(hash_feature("ns", "x", bad), config_error);
}

TEST_CASE("hashed indices spread evenly over the table") {
  HashConfig cfg;
  cfg.bits = 8;
  std::vector<int> bins(256, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    bins[hash_feature("ns", "token" + std::to_string(i), cfg)]++;
  // Mean load is 78; a healthy hash keeps every bin well under twice that.
  int max_bin = 0, empty = 0;
  for (const int b : bins) {
    max_bin = std::max(max_bin, b);
    if (b == 0) ++empty;
  }
  CHECK(max_bin < 140);
  CHECK(empty == 0);
}

TEST_CASE("raw line parsing") {
  const RawRecord rec = parse_raw_line("1 |user id123 age25 |ad creative7");
  CHECK(rec.label == 1);
  REQUIRE(rec.tokens.size() == 3);
  CHECK(rec.tokens[0] == std::pair<std::string, std::string>{"user", "id123"});
  CHECK(rec.tokens[1] == std::pair<std::string, std::string>{"user", "age25"});
  CHECK(rec.tokens[2] ==
        std::pair<std::string, std::string>{"ad", "creative7"});

  // Repeated namespaces keep accumulating tokens.
  const RawRecord rep = parse_raw_line("0 |a x |a y");
  REQUIRE(rep.tokens.size() == 2);
  CHECK(rep.tokens[0].second == "x");
  CHECK(rep.tokens[1].second == "y");

  CHECK_THROWS_AS(parse_raw_line(""), parse_error);
  CHECK_THROWS_AS(parse_raw_line("1 no pipes here"), parse_error);
  CHECK_THROWS_AS(parse_raw_line("2 |a x"), parse_error);
  CHECK_THROWS_AS(parse_raw_line("|a x"), parse_error);
  CHECK_THROWS_AS(parse_raw_line("1 | x"), parse_error);
  CHECK_THROWS_AS(parse_raw_line("1 |a"), parse_error);
  CHECK_THROWS_AS(parse_raw_line("1 |a x\t"), parse_error);
}

TEST_CASE("hash_record builds sorted sparse examples") {
  HashConfig cfg;
  cfg.bits = 18;

  const RawRecord rec = parse_raw_line("1 |user id7 |ad camp3 slot9");
  const Example ex = hash_record(rec, cfg);
  CHECK(ex.label == 1.0);
  REQUIRE(ex.features.entries.size() == 3);
  for (std::size_t i = 1; i < ex.features.entries.size(); ++i)
    CHECK(ex.features.entries[i - 1].first < ex.features.entries[i].first);
  for (const auto& [index, value] : ex.features.entries) {
    CHECK(index < cfg.dimension());
    CHECK(value == 1.0);
  }

  // A repeated token hashes to the same slot and accumulates.
  const Example dup = hash_record(parse_raw_line("1 |a x x"), cfg);
  REQUIRE(dup.features.entries.size() == 1);
  CHECK(dup.features.entries[0].second == 2.0);

  // Configured conjunctions add one crossed feature per token pair.
  HashConfig crossed = cfg;
  crossed.conjunctions.emplace_back("user", "ad");
  const Example with_cross = hash_record(rec, crossed);
  CHECK(with_cross.features.entries.size() >= 4);
  double mass = 0.0;
  for (const auto& [index, value] : with_cross.features.entries) mass += value;
  CHECK(mass == 5.0);  // 3 plain + 1x2 crossed
}

TEST_CASE("raw files hash into batches with line diagnostics") {
  testutil::TempDir dir("ing7");
  const fs::path path = dir.path() / "raw.txt";
  std::ofstream(path) << "1 |u a |i x\n0 |u b |i y\n";

  HashConfig cfg;
  cfg.bits = 10;
  const Batch batch = hash_raw_file(path, 4, cfg);
  CHECK(batch.time_index == 4);
  REQUIRE(batch.examples.size() == 2);
  CHECK(batch.examples[0].label == 1.0);
  CHECK(batch.examples[1].label == 0.0);

  std::ofstream(path) << "1 |u a\nbroken\n";
  try {
    hash_raw_file(path, 0, cfg);
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    const std::string what = e.what();
    CHECK(what.find("line 2") != std::string::npos);
    CHECK(what.find("raw.txt") != std::string::npos);
  }

  CHECK_THROWS_AS(hash_raw_file(dir.path() / "nope.txt", 0, cfg), io_error);
}

TEST_CASE("position-normalized ctr equalizes ids at baseline quality") {
  // Two ids shown only in different display cells, each exactly at its
  // cell's background rate; background mass pins the cell rates.
  std::vector<CtrRecord> records{
      {"ad", "id1", 1, 1, 2000, 10000},  {"ad", "id2", 2, 1, 1000, 10000},
      {"ad", "bg1", 1, 1, 20000, 100000}, {"ad", "bg2", 2, 1, 10000, 100000},
  };
  const auto table = aggregate_ctr(records);

  const double r1 = table.at("ad:id1");
  const double r2 = table.at("ad:id2");
  // Raw rates differ by 2x; normalized rates agree within 5%.
  CHECK(std::fabs(r1 / r2 - 1.0) < 0.05);

  // Hand value: global 0.15, cell rates 0.2 / 0.1, weights 4/3 and 2/3.
  const double eff1 = 10000.0 * (0.2 / 0.15);
  CHECK(r1 == Approx((2000.0 + 0.05) / (eff1 + 75.0)).epsilon(1e-12));
}

TEST_CASE("ctr effective impressions are floored at the click count") {
  // id sits in a weak cell (weight 1/2 of global); its normalized mass would
  // drop below its clicks without the floor.
  std::vector<CtrRecord> records{
      {"a", "id", 1, 1, 8, 10},
      {"a", "bg", 1, 1, 92, 19990},   // cell rate 0.005
      {"a", "other", 2, 1, 200, 20000},  // cell rate 0.01
  };
  // global = 300/40000 = 0.0075; cell(1,1) = 100/20000 = 0.005;
  // weight = 2/3; normalized = 10 * 2/3 = 6.67 < 8 clicks.
  const auto table = aggregate_ctr(records);
  CHECK(table.at("a:id") == Approx((8.0 + 0.05) / (8.0 + 75.0)).epsilon(1e-12));
}

TEST_CASE("ctr rates live in (0, 1) and inputs are validated") {
  Rng rng(3);
  std::vector<CtrRecord> records;
  for (int i = 0; i < 200; ++i) {
    CtrRecord r;
    r.ns = "n";
    r.token = "t" + std::to_string(rng.below(40));
    r.position = static_cast<std::uint32_t>(rng.below(3));
    r.depth = static_cast<std::uint32_t>(rng.below(2));
    r.impressions = 1 + rng.below(1000);
    r.clicks = rng.below(r.impressions + 1);
    records.push_back(r);
  }
  for (const auto& [key, rate] : aggregate_ctr(records)) {
    CHECK(rate > 0.0);
    CHECK(rate < 1.0);
  }

  std::vector<CtrRecord> bad{{"a", "x", 0, 0, 5, 3}};
  CHECK_THROWS_AS(aggregate_ctr(bad), parse_error);
  std::vector<CtrRecord> zero{{"a", "x", 0, 0, 0, 0}};
  CHECK_THROWS_AS(aggregate_ctr(zero), undefined_metric_error);
  std::vector<CtrRecord> anon{{"", "x", 0, 0, 1, 2}};
  CHECK_THROWS_AS(aggregate_ctr(anon), parse_error);
  CtrConfig cfg;
  cfg.alpha = 80.0;  // alpha >= beta
  std::vector<CtrRecord> ok{{"a", "x", 0, 0, 1, 2}};
  CHECK_THROWS_AS(aggregate_ctr(ok, cfg), config_error);
}

TEST_CASE("ctr tables round-trip exactly") {
  testutil::TempDir dir("ing8");
  const fs::path path = dir.path() / "ctr.txt";

  std::vector<CtrRecord> records{{"ad", "one", 1, 1, 10, 100},
                                 {"ad", "two", 1, 1, 20, 100}};
  const auto table = aggregate_ctr(records);
  write_ctr_table(path, table);
  const auto back = read_ctr_table(path);
  REQUIRE(back.size() == table.size());
  for (const auto& [key, rate] : table) CHECK(back.at(key) == rate);

  std::ofstream(dir.path() / "bad1.txt") << "nocolon 0.5\n";
  CHECK_THROWS_AS(read_ctr_table(dir.path() / "bad1.txt"), parse_error);
  std::ofstream(dir.path() / "bad2.txt") << "a:b 1.5\n";
  CHECK_THROWS_AS(read_ctr_table(dir.path() / "bad2.txt"), parse_error);
  std::ofstream(dir.path() / "bad3.txt") << "a:b 0.5\na:b 0.6\n";
  CHECK_THROWS_AS(read_ctr_table(dir.path() / "bad3.txt"), parse_error);
  CHECK_THROWS_AS(read_ctr_table(dir.path() / "absent.txt"), io_error);
}

TEST_CASE("drift generator is deterministic with the right shape") {
  DriftSpec spec;
  spec.dimension = 30;
  spec.num_batches = 4;
  spec.batch_size = 50;
  spec.sparsity = 6;
  spec.seed = 9;

  const Stream a = generate_drift_stream(spec);
  const Stream b = generate_drift_stream(spec);
  REQUIRE(a.batches.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(a.batches[t].time_index == t);
    REQUIRE(a.batches[t].examples.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
      const Example& ex = a.batches[t].examples[i];
      REQUIRE(ex.features.entries.size() == 6);
      for (std::size_t k = 0; k < 6; ++k) {
        CHECK(ex.features.entries[k].first < 30u);
        if (k > 0)
          CHECK(ex.features.entries[k - 1].first <
                ex.features.entries[k].first);
      }
      CHECK(ex.label == b.batches[t].examples[i].label);
      CHECK(ex.features.entries == b.batches[t].examples[i].features.entries);
    }
  }

  DriftSpec other = spec;
  other.seed = 10;
  const Stream c = generate_drift_stream(other);
  bool differs = false;
  for (std::size_t i = 0; i < 50 && !differs; ++i)
    differs = c.batches[0].examples[i].features.entries !=
              a.batches[0].examples[i].features.entries;
  CHECK(differs);
}

TEST_CASE("a scale-zero hidden vector gives balanced labels") {
  DriftSpec spec;
  spec.dimension = 20;
  spec.num_batches = 1;
  spec.batch_size = 10000;
  spec.sparsity = 5;
  spec.theta_scale = 0.0;
  spec.seed = 2;

  const Stream stream = generate_drift_stream(spec);
  double mean = 0.0;
  for (const Example& ex : stream.batches[0].examples) mean += ex.label;
  mean /= 10000.0;
  CHECK(mean == Approx(0.5).margin(0.02));
}

TEST_CASE("drift events change batches only from their time on") {
  DriftSpec plain;
  plain.dimension = 25;
  plain.num_batches = 6;
  plain.batch_size = 40;
  plain.sparsity = 5;
  plain.seed = 5;

  DriftSpec drifted = plain;
  drifted.drifts.push_back({3, 0.5});

  const Stream a = generate_drift_stream(plain);
  const Stream b = generate_drift_stream(drifted);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(a.batches[t].examples[i].label == b.batches[t].examples[i].label);
      CHECK(a.batches[t].examples[i].features.entries ==
            b.batches[t].examples[i].features.entries);
    }
  bool differs = false;
  for (std::size_t t = 3; t < 6 && !differs; ++t)
    for (std::size_t i = 0; i < 40 && !differs; ++i)
      differs =
          a.batches[t].examples[i].label != b.batches[t].examples[i].label ||
          a.batches[t].examples[i].features.entries !=
              b.batches[t].examples[i].features.entries;
  CHECK(differs);
}

TEST_CASE("drift spec validation") {
  DriftSpec spec;
  spec.drifts.push_back({0, 0.5});
  CHECK_THROWS_AS(generate_drift_stream(spec), config_error);
  spec.drifts = {{3, 1.5}};
  CHECK_THROWS_AS(generate_drift_stream(spec), config_error);
  spec.drifts = {{20, 0.5}};  // beyond num_batches - 1
  CHECK_THROWS_AS(generate_drift_stream(spec), config_error);
  spec.drifts.clear();
  spec.sparsity = 100;
  spec.dimension = 10;
  CHECK_THROWS_AS(generate_drift_stream(spec), config_error);
}
