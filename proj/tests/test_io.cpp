#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "smmd/io.hpp"
#include "smmd/rng.hpp"

using namespace smmd;

TEST_CASE("csv parsing: layout, whitespace, errors") {
  const Matrix m = parse_csv_matrix("1,2\n3,4\n");
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m(1, 0) == 3.0);

  const Matrix ws = parse_csv_matrix(" 1.5 , -2e-3 \r\n\n 4 , 5 \n");
  CHECK(ws(0, 1) == -2e-3);
  CHECK(ws.rows() == 2);

  CHECK_THROWS_AS(parse_csv_matrix(""), InputError);
  CHECK_THROWS_AS(parse_csv_matrix("1,2\n3\n"), InputError);
  CHECK_THROWS_AS(parse_csv_matrix("1,abc\n"), InputError);
  CHECK_THROWS_AS(read_csv_matrix("/nonexistent/file.csv"), InputError);
}

TEST_CASE("format_double round trips bit-exactly") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<int>(rng.below(20)) - 10);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("csv write/read round trip") {
  Rng rng(2);
  const Matrix m = rng.normal_matrix(7, 3);
  const auto path = std::filesystem::temp_directory_path() / "smmd_io_test.csv";
  write_csv(path.string(), "", m);
  const Matrix back = read_csv_matrix(path.string());
  CHECK((m - back).lpNorm<Eigen::Infinity>() == 0.0);

  write_csv(path.string(), "a,b,c", m);
  const std::string text = read_text_file(path.string());
  CHECK(text.rfind("a,b,c\n", 0) == 0);
  std::remove(path.string().c_str());
}
