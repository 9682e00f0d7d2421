#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "kbc/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run kbc_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = kbc::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Value of `key=` in the RESULT line.
std::string result_field(const std::string& out, const std::string& key) {
  const auto line = out.find("RESULT\t");
  REQUIRE(line != std::string::npos);
  const auto end = out.find('\n', line);
  const auto row = out.substr(line, end - line);
  const auto p = row.find("\t" + key + "=");
  REQUIRE(p != std::string::npos);
  const auto v = p + key.size() + 2;
  return row.substr(v, row.find('\t', v) - v);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kbc_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(kbc_run({}).code == kbc::cli::kUsage);
  CHECK(kbc_run({"frobnicate"}).code == kbc::cli::kUsage);
  const auto r = kbc_run({"train", "bogus", "--data", "x", "--out", "y"});
  CHECK(r.code == kbc::cli::kUsage);
  CHECK(r.err.find("bogus") != std::string::npos);
  CHECK(kbc_run({"eval"}).code == kbc::cli::kUsage);
}

TEST_CASE("help lists defaults") {
  const auto r = kbc_run({"extract", "--help"});
  CHECK(r.code == kbc::cli::kOk);
  const auto text = r.out + r.err;
  CHECK(text.find("--max-len") != std::string::npos);
  CHECK(text.find("--walks") != std::string::npos);
  CHECK(text.find("--config") != std::string::npos);
}

TEST_CASE("missing input is a runtime failure") {
  const auto r = kbc_run({"ingest", "--triples", "/nonexistent/t.tsv", "--out", "/tmp/x.bin"});
  CHECK(r.code == kbc::cli::kFailure);
  CHECK(r.err.find("kbc: ") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = kbc_run({"gradcheck", "--dim", "4", "--cases", "12"});
  CHECK(r.code == kbc::cli::kOk);
  CHECK(std::stod(result_field(r.out, "max_relative_error")) < 1e-4);
}

TEST_CASE("single-rule pipeline end to end") {
  TempDir d;
  REQUIRE(kbc_run({"synth", "--preset", "single-rule", "--out-dir", d / "kb"}).code == 0);
  REQUIRE(kbc_run({"ingest", "--triples", d / "kb/triples.tsv", "--out", d / "g.bin",
                   "--min-textual-freq", "0"}).code == 0);
  REQUIRE(kbc_run({"extract", "--graph", d / "g.bin", "--pairs", d / "kb/train.tsv", "--out",
                   d / "tr.paths"}).code == 0);
  REQUIRE(kbc_run({"extract", "--graph", d / "g.bin", "--pairs", d / "kb/test.tsv", "--out",
                   d / "te.paths", "--keep-empty"}).code == 0);
  CHECK(fs::exists(d / "tr.paths.vocab"));

  REQUIRE(kbc_run({"train", "rnn", "--data", d / "tr.paths", "--vectors", d / "kb/vectors.txt",
                   "--out", d / "m.bin"}).code == 0);
  REQUIRE(kbc_run({"predict", "--model", d / "m.bin", "--data", d / "te.paths", "--out",
                   d / "p.tsv"}).code == 0);
  const auto e = kbc_run({"eval", "--predictions", d / "p.tsv"});
  REQUIRE(e.code == 0);
  CHECK(std::stod(result_field(e.out, "map")) >= 0.95);

  SUBCASE("config file with explicit override") {
    std::ofstream(d / "c.cfg") << "# iterations only\niterations = 0\ndim=3\n";
    REQUIRE(kbc_run({"train", "add", "--config", d / "c.cfg", "--iterations", "2", "--data",
                     d / "tr.paths", "--out", d / "a.bin"}).code == 0);
    REQUIRE(kbc_run({"predict", "--model", d / "a.bin", "--data", d / "te.paths", "--out",
                     d / "pa.tsv"}).code == 0);
    std::ofstream(d / "bad.cfg") << "bogus=1\n";
    CHECK(kbc_run({"train", "add", "--config", d / "bad.cfg", "--data", d / "tr.paths", "--out",
                   d / "a.bin"}).code == kbc::cli::kUsage);
  }
  SUBCASE("classifier, comparison and ensemble") {
    REQUIRE(kbc_run({"train", "pra-b", "--data", d / "tr.paths", "--out", d / "lr.txt"}).code == 0);
    REQUIRE(kbc_run({"predict", "--model", d / "lr.txt", "--data", d / "te.paths", "--out",
                     d / "p2.tsv"}).code == 0);
    const auto c = kbc_run({"eval", "--predictions", d / "p2.tsv", "--compare", d / "p.tsv",
                            "--records", d / "r.txt"});
    REQUIRE(c.code == 0);
    CHECK(std::stod(result_field(c.out, "p")) <= 1.0);
    REQUIRE(kbc_run({"ensemble", "--a", d / "p.tsv", "--b", d / "p2.tsv", "--out",
                     d / "pe.tsv"}).code == 0);
    const auto pe = kbc_run({"eval", "--predictions", d / "pe.tsv"});
    CHECK(std::stod(result_field(pe.out, "map")) >= 0.9);
    CHECK(kbc_run({"train", "cluster-pra", "--data", d / "tr.paths", "--out", d / "x.txt"}).code ==
          kbc::cli::kFailure);
  }
}
