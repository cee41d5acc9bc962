#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "cli/csv.hpp"
#include "itdt/model.hpp"
#include "text_util.hpp"

using namespace itdt;
using namespace itdt::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int rc = 0;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "itdt");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int rc = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {rc, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& ls) {
  std::ofstream out(p);
  for (const auto& l : ls) out << l << '\n';
}

struct Workspace {
  fs::path dir;
  fs::path config;

  Workspace() {
    dir = fs::temp_directory_path() / ("itdt_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "run.conf";
    std::ofstream(config) << "seed = 3\n"
                             "horizon = 8\n"
                             "inputs = u0,u1\n"
                             "outputs = y0,y1,y2\n"
                             "bootstrap = 0\n"
                             "output_dir = out\n";
  }
  ~Workspace() { fs::remove_all(dir); }

  Outcome cmd(const std::string& name, std::vector<std::string> sets) {
    std::vector<std::string> args{name, "-c", config.string()};
    for (auto& s : sets) {
      args.push_back("-s");
      args.push_back(s);
    }
    return invoke(args);
  }

  fs::path simulate(const std::string& file, long length, std::uint64_t seed,
                    std::vector<std::string> extra = {}) {
    extra.push_back("sim.output=" + file);
    extra.push_back("sim.length=" + std::to_string(length));
    extra.push_back("seed=" + std::to_string(seed));
    const auto r = cmd("simulate", extra);
    REQUIRE_MESSAGE(r.rc == 0, r.err);
    return dir / file;
  }
};

}  // namespace

TEST_CASE("parse_timestamp") {
  CHECK(*parse_timestamp("42") == 42.0);
  CHECK(*parse_timestamp("1970-01-02T00:00:01Z") == 86401.0);
  CHECK(*parse_timestamp("1970-01-01 01:00:00.25") == 3600.25);
  CHECK(*parse_timestamp("1970-01-01T01:00:00+01:00") == 0.0);
  CHECK_FALSE(parse_timestamp("2020-13-01T00:00:00").has_value());
  CHECK_FALSE(parse_timestamp("yesterday").has_value());
  CHECK_FALSE(parse_timestamp("").has_value());
}

TEST_CASE("map_columns") {
  ColumnRoles roles;
  roles.inputs = {"u"};
  roles.outputs = {"y"};
  const auto m = map_columns({"y", "timestamp", "u", "label"}, roles);
  CHECK(m.timestamp == 1);
  CHECK(m.inputs == std::vector<std::size_t>{2});
  CHECK(m.outputs == std::vector<std::size_t>{0});
  CHECK(*m.label == 3);
  CHECK_FALSE(map_columns({"timestamp", "u", "y"}, roles).label.has_value());

  auto code = [&](std::vector<std::string> header) {
    try {
      map_columns(header, roles);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInternalConsistency;
  };
  CHECK(code({"timestamp", "y"}) == ErrorCode::kParseError);
  CHECK(code({"timestamp", "u", "y", "y"}) == ErrorCode::kParseError);
  CHECK(code({"timestamp", "u", "y", "extra"}) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("Config") {
  const Config c = Config::parse("# comment\nwindow = 30\n\nalpha=0.05 # trailing\ninputs = a, b\n");
  CHECK(c.integer("window") == 30);
  CHECK(c.real("alpha") == 0.05);
  CHECK(c.list("inputs") == std::vector<std::string>{"a", "b"});
  CHECK(c.integer("horizon") == 60);
  CHECK_FALSE(c.has("seed"));
  CHECK_THROWS_AS(c.seed(), Error);
  CHECK_THROWS_AS(Config::parse("no_such_key = 1"), Error);
  CHECK_THROWS_AS(Config::parse("window = 1\nwindow = 2"), Error);
  CHECK_THROWS_AS(Config::parse("window"), Error);
  Config d;
  d.set("seed=9");
  CHECK(d.seed() == 9u);
  d.set("window", "abc");
  CHECK_THROWS_AS(d.integer("window"), Error);
  std::ostringstream os;
  Config().print(os);
  for (const auto& k : config_keys()) CHECK(os.str().find(k.name) != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(exit_code(ErrorCode::kParseError) == 2);
  CHECK(exit_code(ErrorCode::kInvalidArgument) == 2);
  CHECK(exit_code(ErrorCode::kNonFiniteInput) == 2);
  CHECK(exit_code(ErrorCode::kDimensionMismatch) == 3);
  CHECK(exit_code(ErrorCode::kNoConvergence) == 3);
  CHECK(invoke({"--print-config"}).rc == 0);
  CHECK(invoke({"frobnicate"}).rc == 2);
  CHECK(invoke({}).rc == 2);
}

TEST_CASE("simulate writes labels") {
  Workspace ws;
  const auto clean = ws.simulate("clean.csv", 200, 1);
  const auto ls = lines(clean);
  REQUIRE(ls.size() == 201);
  CHECK(ls[0] == "timestamp,u0,u1,y0,y1,y2,label");
  for (std::size_t k = 1; k < ls.size(); ++k) CHECK(ls[k].back() == '0');

  const auto attacked = ws.simulate("bias.csv", 200, 1,
                                    {"sim.attack=bias", "sim.start=50", "sim.end=80"});
  const auto la = lines(attacked);
  CHECK(la[50].back() == '0');
  CHECK(la[51].back() == '1');
  CHECK(la[80].back() == '1');
  CHECK(la[81].back() == '0');
  CHECK(slurp(ws.simulate("again.csv", 200, 1)) == slurp(clean));
  CHECK(ws.cmd("simulate", {"sim.output=x.csv", "seed="}).rc == 2);
}

TEST_CASE("identify, calibrate, detect, eval") {
  Workspace ws;
  const auto train = ws.simulate("train.csv", 4000, 11);
  const auto val = ws.simulate("val.csv", 6000, 12);

  const auto id = ws.cmd("identify", {"train=train.csv", "model=m.itdt-model"});
  REQUIRE_MESSAGE(id.rc == 0, id.err);
  const ModelFile identified = read_model_file((ws.dir / "m.itdt-model").string());
  CHECK(passes(validate(identified.filter.model())));
  CHECK(identified.provenance.output_columns == std::vector<std::string>{"y0", "y1", "y2"});
  CHECK(identified.provenance.training_hash == file_hash(train.string()));
  CHECK(fs::exists(ws.dir / "out" / "identify_report.json"));

  SUBCASE("missing cell names the row") {
    auto ls = lines(train);
    auto cells = text::split(ls[10], ',');
    ls[10] = std::string(cells[0]) + ",," + ls[10].substr(ls[10].find(',', cells[0].size() + 1) + 1);
    write_lines(ws.dir / "holes.csv", ls);
    const auto r = ws.cmd("identify", {"train=holes.csv", "model=h.itdt-model"});
    CHECK(r.rc == 2);
    CHECK(r.err.find("row 10") != std::string::npos);
  }

  SUBCASE("non-monotone timestamps") {
    auto ls = lines(train);
    std::swap(ls[20], ls[21]);
    write_lines(ws.dir / "shuffled.csv", ls);
    CHECK(ws.cmd("identify", {"train=shuffled.csv", "model=s.itdt-model"}).rc == 2);
  }

  SUBCASE("calibrate guards") {
    ws.simulate("dirty.csv", 3000, 13, {"sim.attack=bias", "sim.start=100", "sim.end=200"});
    CHECK(ws.cmd("calibrate", {"validation=dirty.csv", "model=m.itdt-model"}).rc == 2);
    const auto a0 = ws.cmd("calibrate", {"validation=val.csv", "model=m.itdt-model", "alpha=0"});
    CHECK(a0.rc == 2);
    CHECK(a0.err.find("invalid rate") != std::string::npos);
  }

  SUBCASE("calibrate then detect a ramp") {
    ws.simulate("ramp.csv", 3000, 14,
                {"sim.attack=ramp", "sim.start=1500", "sim.ramp_stages=100:3,200:0"});
    const auto cal = ws.cmd("calibrate", {"validation=val.csv", "model=m.itdt-model",
                                          "bootstrap=20", "sweep_windows=30,60",
                                          "sweep_data=ramp.csv"});
    REQUIRE_MESSAGE(cal.rc == 0, cal.err);
    const ModelFile calibrated = read_model_file((ws.dir / "m.itdt-model").string());
    REQUIRE(calibrated.provenance.tau);
    CHECK(*calibrated.provenance.alpha == 0.01);
    CHECK(calibrated.provenance.tau_ci95);
    CHECK(calibrated.filter.K() == identified.filter.K());
    CHECK(calibrated.provenance.sweep.size() == 2);

    const auto det = ws.cmd("detect", {"stream=ramp.csv", "model=m.itdt-model",
                                       "scores=ramp.scores.csv"});
    REQUIRE_MESSAGE(det.rc == 0, det.err);
    const auto sc = lines(ws.dir / "ramp.scores.csv");
    REQUIRE(sc.size() == 3001);
    CHECK(sc[0] == "step,timestamp,kl,alarm");
    CHECK(text::split(sc[1], ',')[2].empty());
    int in_attack = 0;
    for (int t = 1500; t < 1800; ++t) in_attack += sc[static_cast<std::size_t>(t) + 1].back() == '1';
    CHECK(in_attack > 0);

    const auto ev = ws.cmd("eval", {"scores=ramp.scores.csv", "test=ramp.csv"});
    REQUIRE_MESSAGE(ev.rc == 0, ev.err);
    const auto doc = nlohmann::json::parse(slurp(ws.dir / "out" / "eval_report.json"));
    CHECK(doc["recall"].get<double>() > 0.0);

    auto wide = lines(ws.dir / "ramp.csv");
    wide[0] += ",extra";
    for (std::size_t k = 1; k < wide.size(); ++k) wide[k] += ",0";
    write_lines(ws.dir / "wide.csv", wide);
    CHECK(ws.cmd("detect", {"stream=wide.csv", "model=m.itdt-model", "scores=w.csv"}).rc == 3);

    auto ragged = lines(ws.dir / "ramp.csv");
    ragged[5] += ",0";
    write_lines(ws.dir / "ragged.csv", ragged);
    CHECK(ws.cmd("detect", {"stream=ragged.csv", "model=m.itdt-model", "scores=r.csv"}).rc == 3);

    // Two streams at once go to output_dir.
    const auto multi = invoke({"detect", "-c", ws.config.string(), "-s", "model=m.itdt-model",
                               (ws.dir / "ramp.csv").string(), (ws.dir / "val.csv").string()});
    REQUIRE_MESSAGE(multi.rc == 0, multi.err);
    CHECK(slurp(ws.dir / "out" / "ramp.scores.csv") == slurp(ws.dir / "ramp.scores.csv"));
    CHECK(fs::exists(ws.dir / "out" / "val.scores.csv"));
  }
}

TEST_CASE("detect on clean data stays in the false-alarm band") {
  Workspace ws;
  ws.simulate("val.csv", 20000, 21, {"sim.truth=truth.itdt-model"});
  ws.simulate("test.csv", 20000, 22);
  REQUIRE(ws.cmd("calibrate", {"validation=val.csv", "model=truth.itdt-model"}).rc == 0);
  REQUIRE(ws.cmd("detect", {"stream=test.csv", "model=truth.itdt-model", "scores=t.csv"}).rc == 0);
  const auto sc = lines(ws.dir / "t.csv");
  long alarms = 0, scored = 0;
  for (std::size_t k = 1; k < sc.size(); ++k) {
    const auto cells = text::split(sc[k], ',');
    if (cells[2].empty()) continue;
    ++scored;
    alarms += cells[3] == "1";
  }
  const double rate = static_cast<double>(alarms) / static_cast<double>(scored);
  CHECK(rate >= 0.003);
  CHECK(rate <= 0.03);
}

TEST_CASE("eval with perfect alarms") {
  Workspace ws;
  const auto test = ws.simulate("t.csv", 500, 5, {"sim.attack=bias", "sim.start=100", "sim.end=200"});
  const auto ls = lines(test);
  std::vector<std::string> scores{"step,timestamp,kl,alarm"};
  for (std::size_t k = 1; k < ls.size(); ++k) {
    const auto cells = text::split(ls[k], ',');
    scores.push_back(std::to_string(k - 1) + "," + std::string(cells[0]) + ",0.5," +
                     std::string(1, ls[k].back()));
  }
  write_lines(ws.dir / "perfect.csv", scores);
  const auto r = ws.cmd("eval", {"scores=perfect.csv", "test=t.csv", "report=perfect.json"});
  REQUIRE_MESSAGE(r.rc == 0, r.err);
  const auto doc = nlohmann::json::parse(slurp(ws.dir / "perfect.json"));
  CHECK(doc["f1"].get<double>() == 1.0);
  CHECK(doc["mean_delay_seconds"].get<double>() == 0.0);
}
