#include "subsced/io.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

using namespace subsced;

TEST_CASE("parse_csv accepts LF and CRLF") {
  std::istringstream lf("a,b\n1,2\n3.5,-4e-3\n");
  const DataFrame d = parse_csv(lf);
  CHECK(d.names == std::vector<std::string>{"a", "b"});
  CHECK(d.data.rows() == 2);
  CHECK(d.data(1, 1) == -4e-3);
  std::istringstream crlf("a,b\r\n1,2\r\n3.5,-4e-3\r\n");
  CHECK(parse_csv(crlf).data == d.data);
  CHECK(d.col("b")[0] == 2.0);
  CHECK_THROWS_AS(d.column("c"), Error);
}

TEST_CASE("parse_csv rejects malformed tables") {
  for (const char* text : {"a,b\n1\n", "a,b\n1,\n", "a,b\n1,x\n", "a,b\n1,nan\n", "a,b\n1,inf\n", ""}) {
    std::istringstream in(text);
    try {
      parse_csv(in);
      FAIL("accepted: " << text);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseError);
    }
  }
}

TEST_CASE("format_double round-trips") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-300, 300);
  for (int i = 0; i < 1000; ++i) {
    const double x = std::pow(10.0, u(rng)) * (i % 2 ? -1 : 1);
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("weights files") {
  const auto path = std::filesystem::temp_directory_path() / "subsced_weights_test.csv";
  Vector w(3);
  w << 1.0, 0.25, 1e-300;
  write_weights(path.string(), w);
  CHECK(read_weights(path.string()) == w);

  DataFrame two;
  two.names = {"a", "b"};
  two.data = Matrix::Ones(2, 2);
  write_csv(path.string(), two);
  CHECK_THROWS_AS(read_weights(path.string()), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_csv(path.string()), Error);
}
