// End-to-end CLI checks: exit codes, output files, determinism, golden data.
// The binary path arrives via the SMMD_CLI environment variable (set by
// ctest); golden files live under SMMD_GOLDEN_DIR.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

std::string cli() {
  const char* p = std::getenv("SMMD_CLI");
  REQUIRE(p != nullptr);
  return p;
}

std::string golden_dir() {
  const char* p = std::getenv("SMMD_GOLDEN_DIR");
  REQUIRE(p != nullptr);
  return p;
}

fs::path workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("smmd_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, std::string* stdout_text = nullptr) {
  const std::string out_file = (workdir() / "stdout.txt").string();
  const std::string command = cli() + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(command.c_str());
  if (stdout_text) {
    std::ifstream in(out_file);
    std::ostringstream ss;
    ss << in.rdbuf();
    *stdout_text = ss.str();
  }
  return WEXITSTATUS(status);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double json_value_field(const std::string& text) {
  const auto pos = text.find("\"value\":");
  REQUIRE(pos != std::string::npos);
  return std::stod(text.substr(pos + 8));
}

}  // namespace

TEST_CASE("estimate: identical files give zero, point masses the closed form") {
  const fs::path zeros = workdir() / "zeros.csv";
  const fs::path ones = workdir() / "ones.csv";
  write_file(zeros, "0\n0\n0\n0\n");
  write_file(ones, "1\n1\n1\n1\n");

  std::string out;
  int code = run("estimate --x " + zeros.string() + " --y " + zeros.string() +
                     " --method mmd2_biased",
                 &out);
  CHECK(code == 0);
  CHECK(std::abs(json_value_field(out)) < 1e-15);

  code = run("estimate --x " + zeros.string() + " --y " + ones.string() +
                 " --method mmd2_biased",
             &out);
  CHECK(code == 0);
  CHECK(json_value_field(out) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5))).epsilon(1e-12));

  // smmd with lambda 1 and mu = shared x: value^2 = 2(1 - e^{-1/2}) / 3
  code = run("estimate --x " + zeros.string() + " --y " + ones.string() +
                 " --method smmd --lambda 1",
             &out);
  CHECK(code == 0);
  const double v = json_value_field(out);
  CHECK(v * v == doctest::Approx(2.0 * (1.0 - std::exp(-0.5)) / 3.0).epsilon(1e-12));
}

TEST_CASE("estimate exit codes: parse failure 2, numerical failure 3") {
  const fs::path bad = workdir() / "bad.csv";
  write_file(bad, "1,2\nx,y\n");
  const fs::path good = workdir() / "good.csv";
  write_file(good, "0\n1\n");
  std::string out;
  CHECK(run("estimate --x " + bad.string() + " --y " + good.string(), &out) == 2);
  CHECK(run("estimate --x " + good.string() + " --y " + good.string() +
                " --method unknown_method",
            &out) == 2);
  CHECK(run("estimate --x /no/such/file.csv --y " + good.string(), &out) == 2);

  // non-finite data poisons the support system: exit 3 with diagnostics JSON
  const fs::path nans = workdir() / "nans.csv";
  write_file(nans, "nan\nnan\nnan\n");
  const fs::path fine = workdir() / "fine.csv";
  write_file(fine, "1\n2\n3\n");
  CHECK(run("estimate --x " + nans.string() + " --y " + fine.string() +
                " --method gcmmd --lambda 1",
            &out) == 3);
  CHECK(out.find("\"kind\":\"numerical\"") != std::string::npos);
  CHECK(out.find("\"exit_code\":3") != std::string::npos);
}

TEST_CASE("estimate --out writes the result deterministically") {
  const fs::path zeros = workdir() / "z2.csv";
  const fs::path ones = workdir() / "o2.csv";
  write_file(zeros, "0\n0\n0\n0\n");
  write_file(ones, "1\n1\n1\n1\n");
  const fs::path r1 = workdir() / "r1.json";
  const fs::path r2 = workdir() / "r2.json";
  CHECK(run("estimate --x " + zeros.string() + " --y " + ones.string() +
            " --method gcmmd --lambda 0.5 --out " + r1.string()) == 0);
  CHECK(run("estimate --x " + zeros.string() + " --y " + ones.string() +
            " --method gcmmd --lambda 0.5 --out " + r2.string()) == 0);
  CHECK(read_file(r1) == read_file(r2));
  CHECK(!read_file(r1).empty());
}

TEST_CASE("field verb reproduces the golden CSV byte for byte") {
  const fs::path out = workdir() / "field.csv";
  const std::string flags =
      "field --loss MMD --theta-min 0.25 --theta-max 20 --theta-count 8 "
      "--inv-psi-min 0.25 --inv-psi-max 20 --inv-psi-count 8 --out " +
      out.string();
  REQUIRE(run(flags) == 0);
  const std::string got = read_file(out);
  const std::string want = read_file(fs::path(golden_dir()) / "field_mmd_8x8.csv");
  REQUIRE(!want.empty());
  CHECK(got == want);

  // and a rerun is byte-identical
  const fs::path out2 = workdir() / "field2.csv";
  REQUIRE(run("field --loss MMD --theta-min 0.25 --theta-max 20 --theta-count 8 "
              "--inv-psi-min 0.25 --inv-psi-max 20 --inv-psi-count 8 --out " +
              out2.string()) == 0);
  CHECK(read_file(out2) == got);
}

TEST_CASE("field verb writes trajectories when asked") {
  const fs::path out = workdir() / "field_s.csv";
  const fs::path traj = workdir() / "traj.csv";
  REQUIRE(run("field --loss SMMD --theta-count 2 --inv-psi-count 2 "
              "--simulate-from 1,4 --simulate-steps 50 --simulate-step-size 0.5 "
              "--out " + out.string() + " --trajectories-out " + traj.string()) == 0);
  const std::string text = read_file(traj);
  CHECK(text.rfind("trajectory,step,theta,inv_psi,diverged", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 52);  // header + 51 rows
}

TEST_CASE("isolines: schema, determinism, P=P cell is minimal") {
  const fs::path out = workdir() / "iso.csv";
  REQUIRE(run("isolines --distance mmd --mus 0 0.5 1 --sigmas 0.1 "
              "--bandwidths 1 --n-samples 256 --seed 3 --out " +
              out.string()) == 0);
  const fs::path out_again = workdir() / "iso2.csv";
  REQUIRE(run("isolines --distance mmd --mus 0 0.5 1 --sigmas 0.1 "
              "--bandwidths 1 --n-samples 256 --seed 3 --out " +
              out_again.string()) == 0);
  CHECK(read_file(out) == read_file(out_again));
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  CHECK(header == "mu,sigma,param,value,log10_value");
  double best = 1e300;
  int best_row = -1, row = 0;
  std::string line;
  std::vector<double> values;
  while (std::getline(in, line)) {
    const auto last_comma = line.rfind(',');
    const auto prev_comma = line.rfind(',', last_comma - 1);
    values.push_back(std::stod(line.substr(prev_comma + 1, last_comma - prev_comma - 1)));
    if (values.back() < best) {
      best = values.back();
      best_row = row;
    }
    ++row;
  }
  REQUIRE(row == 3);
  CHECK(best_row == 0);  // the mu = 0 cell matches P
}

TEST_CASE("critic-field: P=Q gives a vanishing field; swap flips the sign") {
  const fs::path a = workdir() / "cf_same.csv";
  REQUIRE(run("critic-field --p-mean 0 0 --q-mean 0 0 --p-sigma 0.5 0.5 "
              "--q-sigma 0.5 0.5 --n-samples 64 --support-size 16 --grid-count 5 "
              "--seed 9 --out " + a.string()) == 0);
  {
    std::ifstream in(a);
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "x0,x1,grad_x0,grad_x1,unit_x0,unit_x1,witness,mu_density");
    // identical seeded sample sets on both sides: eta_hat = 0 exactly
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string cell;
      std::vector<double> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
      CHECK(std::hypot(cells[2], cells[3]) < 1e-6);
    }
  }
  const fs::path b = workdir() / "cf_pq.csv";
  const fs::path c = workdir() / "cf_qp.csv";
  REQUIRE(run("critic-field --p-mean -1 0 --q-mean 1 0 --n-samples 64 "
              "--support-size 16 --grid-count 5 --seed 9 --out " + b.string()) == 0);
  REQUIRE(run("critic-field --q-mean -1 0 --p-mean 1 0 --n-samples 64 "
              "--support-size 16 --grid-count 5 --seed 9 --out " + c.string()) == 0);
  std::ifstream inb(b), inc(c);
  std::string hb, hc, lb, lc;
  std::getline(inb, hb);
  std::getline(inc, hc);
  while (std::getline(inb, lb) && std::getline(inc, lc)) {
    std::istringstream sb(lb), sc(lc);
    std::string cell;
    std::vector<double> vb, vc;
    while (std::getline(sb, cell, ',')) vb.push_back(std::stod(cell));
    while (std::getline(sc, cell, ',')) vc.push_back(std::stod(cell));
    // swapping P and Q flips the witness and its gradient
    CHECK(vb[2] == doctest::Approx(-vc[2]).epsilon(1e-6).scale(1.0));
    CHECK(vb[3] == doctest::Approx(-vc[3]).epsilon(1e-6).scale(1.0));
    CHECK(vb[6] == doctest::Approx(-vc[6]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("train: zero steps echoes config with an empty history") {
  const fs::path dir = workdir() / "train0";
  fs::create_directories(dir);
  const fs::path config = workdir() / "t0.json";
  write_file(config, R"({"generator_steps":0,"generator":{"widths":[2,8,2]},)"
                     R"("critic":{"widths":[2,8,1]}})");
  REQUIRE(run("train --config " + config.string() + " --out-dir " + dir.string()) == 0);
  const std::string hist = read_file(dir / "history.csv");
  CHECK(hist == "step,critic_loss,gen_loss,mmd2,grad_term,denom,collapse\n");
  const std::string echo = read_file(dir / "config.json");
  CHECK(echo.find("\"generator_steps\": 0") != std::string::npos);
  CHECK(!read_file(dir / "generator.json").empty());

  CHECK(run("train --config /no/such/config.json --out-dir " + dir.string()) == 2);
}

TEST_CASE("train: short run produces history and is reproducible") {
  const fs::path dir1 = workdir() / "train_a";
  const fs::path dir2 = workdir() / "train_b";
  fs::create_directories(dir1);
  fs::create_directories(dir2);
  const fs::path config = workdir() / "t5.json";
  write_file(config, R"({"generator_steps":5,"batch_size":16,"seed":4,)"
                     R"("generator":{"widths":[2,8,2]},"critic":{"widths":[2,8,1]}})");
  REQUIRE(run("train --config " + config.string() + " --out-dir " + dir1.string()) == 0);
  REQUIRE(run("train --config " + config.string() + " --out-dir " + dir2.string()) == 0);
  CHECK(read_file(dir1 / "history.csv") == read_file(dir2 / "history.csv"));
  CHECK(read_file(dir1 / "generator.json") == read_file(dir2 / "generator.json"));
  CHECK(read_file(dir1 / "conditioning.csv") == read_file(dir2 / "conditioning.csv"));
}

TEST_CASE("selftest verb runs a filtered check") {
  std::string out;
  CHECK(run("selftest --filter estimators/dirac_closed_form", &out) == 0);
  CHECK(out.find("PASS") != std::string::npos);
}
