#include <doctest.h>

#include <cstdlib>

#include "agra/config.hpp"
#include "agra/core/error.hpp"
#include "testutil.hpp"

using namespace agra;

TEST_SUITE("config") {
  TEST_CASE("defaults cover every known key") {
    Config cfg = Config::defaults();
    for (const std::string& k : Config::known_keys()) {
      CHECK(cfg.has(k));
      CHECK_FALSE(Config::describe(k).empty());
    }
    CHECK(cfg.get_int("seed") == 1234);
    CHECK(cfg.get_enum("method") == "agra");
    CHECK(cfg.get_double("bank.alpha") == 0.1);
    CHECK(cfg.get_int("bank.recluster_period") == 10);
    CHECK(cfg.get_int("train.stage1_epochs") == 15);
    CHECK(cfg.get_double("train.lr_f") == 1e-4);
    CHECK(cfg.get_double("train.lr_d") == 1e-3);
    CHECK(cfg.get_double("train.momentum") == 0.9);
    CHECK(cfg.get_double("train.weight_decay") == 5e-4);
  }

  TEST_CASE("canonical text round-trips exactly") {
    Config cfg = Config::defaults();
    cfg.set("seed", "99");
    cfg.set("method", "dt");
    std::string text = cfg.text();

    Config again = Config::defaults();
    again.load_text(text, "roundtrip");
    CHECK(again.text() == text);
    CHECK(again.hash() == cfg.hash());
    CHECK(again.hash_hex() == cfg.hash_hex());
  }

  TEST_CASE("hash is sensitive to any value change") {
    Config a = Config::defaults();
    Config b = Config::defaults();
    b.set("train.batch_size", "33");
    CHECK(a.hash() != b.hash());
    CHECK(a.hash_hex() != b.hash_hex());
  }

  TEST_CASE("unknown keys are rejected with the key name") {
    Config cfg = Config::defaults();
    CHECK_THROWS_WITH_AS(cfg.set("trian.batch_size", "32"),
                         doctest::Contains("trian.batch_size"), ConfigError);
    CHECK_THROWS_AS(cfg.load_text("no.such.key = 1\n", "inline"), ConfigError);
  }

  TEST_CASE("enum values are validated") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.set("method", "agra2"), ConfigError);
    CHECK_THROWS_AS(cfg.set("graph.mode", "fancy"), ConfigError);
    cfg.set("graph.mode", "intra_only");
    CHECK(cfg.get_enum("graph.mode") == "intra_only");
  }

  TEST_CASE("typed getters validate their values") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.set("train.batch_size", "many"), ConfigError);
    CHECK_THROWS_AS(cfg.set("bank.alpha", "fast"), ConfigError);
    CHECK_THROWS_AS(cfg.set("augment.hflip", "perhaps"), ConfigError);
    cfg.set("augment.hflip", "true");
    CHECK(cfg.get_bool("augment.hflip"));
    cfg.set("augment.hflip", "0");
    CHECK_FALSE(cfg.get_bool("augment.hflip"));
  }

  TEST_CASE("list values parse") {
    Config cfg = Config::defaults();
    std::vector<double> scales = cfg.get_double_list("mmd.scales");
    REQUIRE(scales.size() == 5);
    CHECK(scales[0] == 0.25);
    CHECK(scales[4] == 4.0);

    cfg.set("data.targets", "a.jsonl, b.jsonl");
    std::vector<std::string> targets = cfg.get_str_list("data.targets");
    REQUIRE(targets.size() == 2);
    CHECK(targets[0] == "a.jsonl");
    CHECK(targets[1] == "b.jsonl");
  }

  TEST_CASE("file loading accepts comments and blank lines, later keys win") {
    testutil::TempDir tmp("cfg");
    std::string path = tmp.file("run.cfg");
    testutil::write_file(path,
                         "# experiment\n"
                         "seed = 7\n"
                         "\n"
                         "train.batch_size = 8   # inline comment\n"
                         "seed = 11\n");
    Config cfg = Config::defaults();
    cfg.load_file(path);
    CHECK(cfg.get_int("seed") == 11);
    CHECK(cfg.get_int("train.batch_size") == 8);
  }

  TEST_CASE("malformed lines carry their location") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.load_text("seed 12\n", "inline"), ParseError);
    CHECK_THROWS_WITH_AS(cfg.load_text("seed = 1\nbroken-line\n", "inline"),
                         doctest::Contains("2"), ParseError);
  }

  TEST_CASE("missing config file raises an io error") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.load_file("/definitely/not/here.cfg"), IoError);
  }

  TEST_CASE("set_override parses key=value") {
    Config cfg = Config::defaults();
    cfg.set_override("train.lr_f=0.01");
    CHECK(cfg.get_double("train.lr_f") == 0.01);
    CHECK_THROWS_AS(cfg.set_override("train.lr_f"), ConfigError);
  }

  TEST_CASE("output directory re-rooting") {
    ::unsetenv("AGRA_OUTPUT_ROOT");
    CHECK(resolve_output_dir("/abs/path") == "/abs/path");
    CHECK(resolve_output_dir("rel") == "rel");
    ::setenv("AGRA_OUTPUT_ROOT", "/tmp/agra-root", 1);
    CHECK(resolve_output_dir("rel") == "/tmp/agra-root/rel");
    CHECK(resolve_output_dir("/abs/path") == "/abs/path");
    ::unsetenv("AGRA_OUTPUT_ROOT");
  }
}
