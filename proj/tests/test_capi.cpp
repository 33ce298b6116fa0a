#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "smmd/capi.h"

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

struct MatrixHandle {
  smmd_matrix* m = nullptr;
  ~MatrixHandle() { smmd_matrix_free(m); }
};

}  // namespace

TEST_CASE("matrix handles") {
  const double data[] = {1, 2, 3, 4, 5, 6};
  MatrixHandle h;
  REQUIRE(smmd_matrix_create(data, 2, 3, &h.m) == SMMD_OK);
  CHECK(smmd_matrix_rows(h.m) == 2);
  CHECK(smmd_matrix_cols(h.m) == 3);
  double v = 0;
  CHECK(smmd_matrix_get(h.m, 1, 2, &v) == SMMD_OK);
  CHECK(v == 6.0);
  CHECK(smmd_matrix_get(h.m, 2, 0, &v) == SMMD_ERR_INPUT);
  CHECK(std::strlen(smmd_last_error()) > 0);
  CHECK(smmd_matrix_create(nullptr, 2, 2, &h.m) == SMMD_ERR_INPUT);
}

TEST_CASE("matrix csv loader maps parse failures to input errors") {
  const std::string path = temp_path("smmd_capi_bad.csv");
  std::ofstream(path) << "1,2\nnot,a,number\n";
  smmd_matrix* m = nullptr;
  CHECK(smmd_matrix_read_csv(path.c_str(), &m) == SMMD_ERR_INPUT);
  std::filesystem::remove(path);
}

TEST_CASE("kernel parse, eval, serialize") {
  smmd_kernel* k = nullptr;
  REQUIRE(smmd_kernel_parse(R"({"type":"gaussian","bandwidth":1.0})", &k) == SMMD_OK);
  const double x = 0.0, y = 1.0;
  double out = 0;
  CHECK(smmd_kernel_eval(k, &x, &y, 1, &out) == SMMD_OK);
  CHECK(out == doctest::Approx(std::exp(-0.5)));
  char* text = nullptr;
  CHECK(smmd_kernel_to_json(k, &text) == SMMD_OK);
  CHECK(std::string(text).find("gaussian") != std::string::npos);
  smmd_string_free(text);
  smmd_kernel_free(k);

  CHECK(smmd_kernel_parse("{}", &k) == SMMD_ERR_INPUT);
  CHECK(smmd_kernel_parse(R"({"type":"gaussian","bandwidth":-1})", &k) ==
        SMMD_ERR_INPUT);
}

TEST_CASE("net round trip through the C surface is byte-identical") {
  const char* net_json =
      R"({"leak":0.2,"parametrization":"standard","layers":)"
      R"([{"rows":1,"cols":2,"w":[0.25,-1.5],"b":[0.125]}]})";
  smmd_net* n = nullptr;
  REQUIRE(smmd_net_parse(net_json, &n) == SMMD_OK);
  char* text = nullptr;
  REQUIRE(smmd_net_to_json(n, &text) == SMMD_OK);
  smmd_net* n2 = nullptr;
  REQUIRE(smmd_net_parse(text, &n2) == SMMD_OK);
  char* text2 = nullptr;
  REQUIRE(smmd_net_to_json(n2, &text2) == SMMD_OK);
  CHECK(std::string(text) == std::string(text2));

  const double x[2] = {1.0, 2.0};
  double out = 0;
  CHECK(smmd_net_forward(n, x, 2, &out, 1) == SMMD_OK);
  CHECK(out == doctest::Approx(0.25 - 3.0 + 0.125));
  CHECK(smmd_net_forward(n, x, 3, &out, 1) == SMMD_ERR_INPUT);
  smmd_string_free(text);
  smmd_string_free(text2);
  smmd_net_free(n);
  smmd_net_free(n2);
}

TEST_CASE("estimate: values and error codes") {
  smmd_kernel* k = nullptr;
  REQUIRE(smmd_kernel_parse(R"({"type":"gaussian","bandwidth":1.0})", &k) == SMMD_OK);
  const double zeros[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  const double ones[8] = {1, 1, 1, 1, 1, 1, 1, 1};
  MatrixHandle x, y;
  REQUIRE(smmd_matrix_create(zeros, 8, 1, &x.m) == SMMD_OK);
  REQUIRE(smmd_matrix_create(ones, 8, 1, &y.m) == SMMD_OK);

  char* result = nullptr;
  REQUIRE(smmd_estimate(k, x.m, y.m, nullptr,
                        R"({"method":"mmd2_biased"})", &result) == SMMD_OK);
  std::string text(result);
  smmd_string_free(result);
  CHECK(text.find("\"squared\":true") != std::string::npos);
  const double want = 2.0 * (1.0 - std::exp(-0.5));
  const auto pos = text.find("\"value\":");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(text.substr(pos + 8)) == doctest::Approx(want).epsilon(1e-12));

  // unknown method and bad options map to input errors
  CHECK(smmd_estimate(k, x.m, y.m, nullptr, R"({"method":"nope"})", &result) ==
        SMMD_ERR_INPUT);
  CHECK(smmd_estimate(k, x.m, y.m, nullptr, "{bad", &result) == SMMD_ERR_INPUT);
  // block estimator with indivisible batches
  CHECK(smmd_estimate(k, x.m, y.m, nullptr,
                      R"({"method":"mmd2_block","blocks":3})", &result) ==
        SMMD_ERR_INPUT);
  smmd_kernel_free(k);
}

TEST_CASE("train rejects malformed configs through the C surface") {
  CHECK(smmd_train(R"({"batch_size":0})", "/tmp") == SMMD_ERR_INPUT);
  CHECK(smmd_train("{bad", "/tmp") == SMMD_ERR_INPUT);
}

TEST_CASE("selftest filter runs a named check") {
  int failures = -1;
  REQUIRE(smmd_selftest("estimators/wasserstein1d", 0, 0, &failures) == SMMD_OK);
  CHECK(failures == 0);
}
