#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <sstream>
#include <string>

#include "divlab/config.hpp"
#include "divlab/csv.hpp"
#include "oracle_helpers.hpp"

namespace cfg = divlab::config;
using nlohmann::json;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

json parse(const std::string& text) {
  return cfg::parse_document_string(text, "cfg");
}

bool parse_fails_with(const std::string& text, const std::string& needle) {
  try {
    parse(text);
  } catch (const std::invalid_argument& e) {
    CHECK_THAT(std::string(e.what()), ContainsSubstring(needle));
    return true;
  }
  return false;
}

}  // namespace

TEST_CASE("parse_document handles sections, types, and comments") {
  const std::string text =
      "# a comment line\n"
      "title = \"toy \\\"lab\\\"\\n\"\n"
      "count = -42\n"
      "big = 18446744073709551615\n"
      "rate = 2.5e-1  # trailing comment\n"
      "on = true\n"
      "off = false\n"
      "empty_list = []\n"
      "nested = [[1, 2], [3]]\n"
      "trailing = [1, 2,]\n"
      "inline = { a = 1, b = \"x\" }\n"
      "\n"
      "[run]\n"
      "steps = 10\n"
      "\n"
      "[run.extra]\n"
      "flag = true\n";
  json doc = parse(text);

  CHECK(doc["title"] == "toy \"lab\"\n");
  CHECK(doc["count"] == -42);
  CHECK(doc["big"] == 18446744073709551615ull);
  CHECK(doc["rate"] == 0.25);
  CHECK(doc["on"] == true);
  CHECK(doc["off"] == false);
  CHECK(doc["empty_list"] == json::array());
  CHECK(doc["nested"] == json({{1, 2}, {3}}));
  CHECK(doc["trailing"] == json({1, 2}));
  CHECK(doc["inline"]["a"] == 1);
  CHECK(doc["inline"]["b"] == "x");
  CHECK(doc["run"]["steps"] == 10);
  CHECK(doc["run"]["extra"]["flag"] == true);
}

TEST_CASE("parse_document accepts CRLF line endings") {
  json doc = parse("a = 1\r\n[s]\r\nb = 2\r\n");
  CHECK(doc["a"] == 1);
  CHECK(doc["s"]["b"] == 2);
}

TEST_CASE("parse_document reports line-numbered errors") {
  CHECK(parse_fails_with("a = 1\nb @\n", "cfg:2"));
  CHECK(parse_fails_with("a = 1\na = 2\n", "duplicate key 'a'"));
  CHECK(parse_fails_with("[s]\nx = 1\n[s]\n", "duplicate section 's'"));
  CHECK(parse_fails_with("x = 1\n[x]\n", "collides"));
  CHECK(parse_fails_with("[a]\nb = 1\n[a.b]\n", "collides"));
  CHECK(parse_fails_with("[[points]]\n", "arrays of tables"));
  CHECK(parse_fails_with("x = 1.2.3\n", "malformed number"));
  CHECK(parse_fails_with("x = +3\n", "malformed number"));
  CHECK(parse_fails_with("x = \"abc\n", "unterminated string"));
  CHECK(parse_fails_with("x = \"a\\qb\"\n", "unsupported escape"));
  CHECK(parse_fails_with("x = 1 y\n", "trailing"));
  CHECK(parse_fails_with("[run] steps = 3\n", "trailing"));
  CHECK(parse_fails_with("x = truex\n", "unrecognized value"));
  CHECK(parse_fails_with("x = [1, 2\n", "unexpected end of line"));
  CHECK(parse_fails_with("x = { a = 1, a = 2 }\n", "duplicate key 'a'"));
  CHECK(parse_fails_with("[a!]\n", "malformed section header"));
  CHECK(parse_fails_with("= 3\n", "expected a key"));
}

TEST_CASE("emit_document is a fixed point of parse then emit") {
  const std::string text =
      "beta = 0.5\n"
      "alpha = 1\n"
      "[run]\n"
      "steps = 10\n";
  const std::string once = cfg::emit_document_string(parse(text));
  CHECK(once == "alpha = 1\nbeta = 0.5\n\n[run]\nsteps = 10\n");
  CHECK(cfg::emit_document_string(parse(once)) == once);

  // A richer document must also reach a fixed point after one emission.
  const std::string rich =
      "name = \"quoted \\\"stuff\\\"\"\n"
      "values = [0.5, -3, true, \"s\"]\n"
      "table = { z = 2, a = 0.125 }\n"
      "[outer.inner]\n"
      "rate = 1.5e-3\n"
      "[outer]\n"
      "kind = \"x\"\n";
  const std::string emitted = cfg::emit_document_string(parse(rich));
  CHECK(cfg::emit_document_string(parse(emitted)) == emitted);
  CHECK(parse(emitted) == parse(rich));
}

TEST_CASE("emit_document restricts value types") {
  json not_table = json::array();
  std::ostringstream sink;
  CHECK_THROWS_AS(cfg::emit_document(sink, not_table), std::invalid_argument);

  json inf_doc;
  inf_doc["x"] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(cfg::emit_document_string(inf_doc), std::invalid_argument);

  json null_doc;
  null_doc["x"] = nullptr;
  CHECK_THROWS_AS(cfg::emit_document_string(null_doc), std::invalid_argument);

  // Integer-valued floats collapse to integer spelling on emission.
  json collapse;
  collapse["x"] = 2.0;
  CHECK(cfg::emit_document_string(collapse) == "x = 2\n");
}

TEST_CASE("format_double round trips bit for bit") {
  oracle::Rng rng(90210ull);
  for (int trial = 0; trial < 200; ++trial) {
    double v = rng.normal() * std::pow(10.0, rng.uniform(-12.0, 12.0));
    const std::string s = divlab::csv::format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(divlab::csv::format_double(0.1) == "0.1");
  CHECK(divlab::csv::format_double(2.0) == "2");
}

TEST_CASE("typed accessors reject mismatched json values") {
  CHECK_THROWS_AS(cfg::get_int(json(2.5), "c"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::get_u64(json(-1), "c"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::get_bool(json(1), "c"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::get_string(json(3), "c"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::get_double(json("x"), "c"), std::invalid_argument);
  CHECK(cfg::get_u64(json(7), "c") == 7ull);
  CHECK(cfg::get_double(json(3), "c") == 3.0);
}

TEST_CASE("objective specs round trip through documents") {
  divlab::ObjectiveSpec spec;
  spec.kind = divlab::ObjectiveKind::drkl;
  spec.gamma = 0.7;
  spec.alpha = 0.25;
  spec.beta_js = 0.4;
  spec.lambda_skew = 0.05;

  auto back = cfg::objective_from_json(cfg::to_json(spec), "t");
  CHECK(back.kind == spec.kind);
  CHECK(back.gamma == spec.gamma);
  CHECK(back.alpha == spec.alpha);
  CHECK(back.beta_js == spec.beta_js);
  CHECK(back.lambda_skew == spec.lambda_skew);

  json doc = parse("kind = \"js\"\nbeta = 0.25\n");
  auto js_spec = cfg::objective_from_json(doc, "t");
  CHECK(js_spec.kind == divlab::ObjectiveKind::js);
  CHECK(js_spec.beta_js == 0.25);
  CHECK(js_spec.alpha == 0.5);  // untouched default

  CHECK_THROWS_AS(cfg::objective_from_json(parse("beta = 0.5\n"), "t"),
                  std::invalid_argument);  // kind is required
  CHECK_THROWS_AS(
      cfg::objective_from_json(parse("kind = \"fkl\"\ngama = 1\n"), "t"),
      std::invalid_argument);  // unknown key
  CHECK_THROWS_AS(cfg::objective_from_json(parse("kind = \"klf\"\n"), "t"),
                  std::invalid_argument);  // unknown kind
  CHECK_THROWS_AS(
      cfg::objective_from_json(parse("kind = \"js\"\nbeta = 1\n"), "t"),
      std::invalid_argument);  // out-of-range parameter
  CHECK_THROWS_AS(cfg::objective_from_json(json(3), "t"),
                  std::invalid_argument);
}

TEST_CASE("teacher specs round trip through documents") {
  divlab::TeacherSpec zipf = divlab::ZipfTeacher{100, 1.2, 9ull, false};
  CHECK(cfg::to_json(cfg::teacher_from_json(cfg::to_json(zipf), "t")) ==
        cfg::to_json(zipf));

  divlab::TeacherSpec spike = divlab::TwoSpikeTeacher{8, 0.5, 0.25};
  CHECK(cfg::to_json(cfg::teacher_from_json(cfg::to_json(spike), "t")) ==
        cfg::to_json(spike));

  divlab::TeacherSpec mix =
      divlab::MixtureGridTeacher{{-2.0, 1.0}, {0.5, 0.7}, {0.6, 0.4},
                                 -8.0,       8.0,        512};
  CHECK(cfg::to_json(cfg::teacher_from_json(cfg::to_json(mix), "t")) ==
        cfg::to_json(mix));

  auto parsed = cfg::teacher_from_json(
      parse("kind = \"zipf\"\nvocab_size = 50\nexponent = 1.5\nseed = 3\n"),
      "t");
  const auto& z = std::get<divlab::ZipfTeacher>(parsed);
  CHECK(z.vocab_size == 50);
  CHECK(z.exponent == 1.5);
  CHECK(z.seed == 3ull);
  CHECK(z.permute == true);  // default preserved

  CHECK_THROWS_AS(cfg::teacher_from_json(parse("vocab_size = 3\n"), "t"),
                  std::invalid_argument);  // kind is required
  CHECK_THROWS_AS(cfg::teacher_from_json(parse("kind = \"dirichlet\"\n"), "t"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::teacher_from_json(parse("kind = \"zipf\"\nbins = 4\n"), "t"),
      std::invalid_argument);  // key from another teacher kind
  CHECK_THROWS_AS(
      cfg::teacher_from_json(parse("kind = \"zipf\"\nseed = -1\n"), "t"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::teacher_from_json(parse("kind = \"zipf\"\nvocab_size = 2.5\n"),
                             "t"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::teacher_from_json(
          parse("kind = \"mixture_grid\"\nstds = [1]\nweights = [1]\n"), "t"),
      std::invalid_argument);  // means missing
}

TEST_CASE("init specs round trip through documents") {
  divlab::InitSpec zero;  // zero_logits default
  json jz = cfg::to_json(zero);
  CHECK(jz == json({{"kind", "zero_logits"}}));
  CHECK(cfg::init_from_json(jz, "t").kind == divlab::InitKind::zero_logits);

  divlab::InitSpec gauss{divlab::InitKind::gaussian, 3.0, 17ull};
  auto back = cfg::init_from_json(cfg::to_json(gauss), "t");
  CHECK(back.kind == divlab::InitKind::gaussian);
  CHECK(back.stddev == 3.0);
  CHECK(back.seed == 17ull);

  CHECK_THROWS_AS(cfg::init_from_json(parse("kind = \"warm\"\n"), "t"),
                  std::invalid_argument);
  CHECK_THROWS_AS(cfg::init_from_json(parse("sigma = 1\n"), "t"),
                  std::invalid_argument);
}

TEST_CASE("lab_config_from_json builds run configurations") {
  const std::string text =
      "command = \"fit\"\n"
      "out_dir = \"/tmp/somewhere\"\n"
      "[teacher]\n"
      "kind = \"zipf\"\n"
      "vocab_size = 100\n"
      "exponent = 1.1\n"
      "seed = 7\n"
      "[objective]\n"
      "kind = \"drkl\"\n"
      "gamma = 0.7\n"
      "[run]\n"
      "steps = 50\n"
      "learning_rate = 0.25\n"
      "record_every = 5\n"
      "active_set_threshold = 0.01\n"
      "target_index = \"argmax\"\n"
      "init = { kind = \"gaussian\", stddev = 2, seed = 11 }\n"
      "[mixture]\n"
      "init_mean = -1\n"
      "init_stddev = 1.5\n";
  auto lab = cfg::lab_config_from_json(parse(text), "cfg");

  CHECK(lab.out_dir == "/tmp/somewhere");
  REQUIRE(lab.objectives.size() == 1);
  CHECK(lab.objectives[0].kind == divlab::ObjectiveKind::drkl);
  CHECK(lab.objectives[0].gamma == 0.7);
  CHECK(lab.target_index == -1);
  CHECK(lab.steps == 50);
  CHECK(lab.learning_rate == 0.25);
  CHECK(lab.record_every == 5);
  CHECK(lab.active_set_threshold == 0.01);
  CHECK(lab.init.kind == divlab::InitKind::gaussian);
  CHECK(lab.init.stddev == 2.0);
  CHECK(lab.init.seed == 11ull);
  CHECK(lab.mixture_init_mean == -1.0);
  CHECK(lab.mixture_init_stddev == 1.5);

  auto rc = cfg::to_run_config(lab, lab.objectives[0]);
  CHECK(std::get<divlab::ZipfTeacher>(rc.teacher).vocab_size == 100);
  CHECK(rc.objective.kind == divlab::ObjectiveKind::drkl);
  CHECK(rc.steps == 50);
  CHECK(rc.learning_rate == 0.25);
  CHECK(rc.record_every == 5);
  CHECK(rc.init.seed == 11ull);

  // Mixture translation needs a grid teacher.
  CHECK_THROWS_AS(cfg::to_mixture_config(lab, lab.objectives[0]),
                  std::invalid_argument);

  lab.teacher = divlab::MixtureGridTeacher{{0.0}, {1.0}, {1.0}, -8.0, 8.0, 64};
  auto mc = cfg::to_mixture_config(lab, lab.objectives[0]);
  CHECK(mc.teacher.bins == 64);
  CHECK(mc.init_mean == -1.0);
  CHECK(mc.init_stddev == 1.5);
  CHECK(mc.steps == 50);
}

TEST_CASE("lab_config_from_json validates its surface") {
  const std::string teacher = "[teacher]\nkind = \"zipf\"\n";

  // The teacher section is mandatory.
  CHECK_THROWS_AS(cfg::lab_config_from_json(parse("steps = 3\n"), "cfg"),
                  std::invalid_argument);

  // A single objective and a list of objectives are mutually exclusive.
  // (Top-level keys must precede the sections.)
  CHECK_THROWS_AS(
      cfg::lab_config_from_json(
          parse("objectives = [{ kind = \"rkl\" }]\n" + teacher +
                "[objective]\nkind = \"fkl\"\n"),
          "cfg"),
      std::invalid_argument);

  auto multi = cfg::lab_config_from_json(
      parse("objectives = [{ kind = \"fkl\" }, { kind = \"rkl\" }]\n" +
            teacher),
      "cfg");
  REQUIRE(multi.objectives.size() == 2);
  CHECK(multi.objectives[1].kind == divlab::ObjectiveKind::rkl);

  CHECK_THROWS_AS(
      cfg::lab_config_from_json(parse("objectives = 3\n" + teacher), "cfg"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::lab_config_from_json(parse("mystery = 1\n" + teacher), "cfg"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::lab_config_from_json(
          parse(teacher + "[run]\ntarget_index = \"best\"\n"), "cfg"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      cfg::lab_config_from_json(parse(teacher + "[run]\nwarmup = 2\n"), "cfg"),
      std::invalid_argument);

  auto indexed = cfg::lab_config_from_json(
      parse(teacher + "[run]\ntarget_index = 3\n"), "cfg");
  CHECK(indexed.target_index == 3);
}

TEST_CASE("lab_config_to_json reproduces the resolved document") {
  const std::string text =
      "objectives = [{ kind = \"fkl\" }, { kind = \"drkl\", gamma = 0.5 }]\n"
      "[teacher]\n"
      "kind = \"two_spike\"\n"
      "vocab_size = 8\n"
      "first_mass = 0.5\n"
      "second_mass = 0.25\n"
      "[run]\n"
      "steps = 20\n"
      "learning_rate = 0.125\n";
  auto lab = cfg::lab_config_from_json(parse(text), "cfg");

  json doc = cfg::lab_config_to_json(lab, false);
  CHECK_FALSE(doc.contains("out_dir"));
  CHECK_FALSE(doc.contains("mixture"));

  const std::string emitted = cfg::emit_document_string(doc);
  CHECK(cfg::emit_document_string(parse(emitted)) == emitted);

  auto lab2 = cfg::lab_config_from_json(parse(emitted), "cfg");
  CHECK(lab2.steps == lab.steps);
  CHECK(lab2.learning_rate == lab.learning_rate);
  CHECK(lab2.target_index == lab.target_index);
  REQUIRE(lab2.objectives.size() == 2);
  CHECK(lab2.objectives[1].gamma == 0.5);
  CHECK(cfg::to_json(lab2.teacher) == cfg::to_json(lab.teacher));
  CHECK(cfg::to_json(lab2.init) == cfg::to_json(lab.init));

  json with_mix = cfg::lab_config_to_json(lab, true);
  CHECK(with_mix["mixture"]["init_stddev"] == 2.0);
}
