#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "concentra/error.hpp"
#include "concentra/io.hpp"
#include "concentra/rng.hpp"

using namespace concentra;

TEST(Csv, SplitsQuotedFields) {
  auto f = io::split_csv_line(R"(a,"b,c","d ""e""",)");
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0], "a");
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "d \"e\"");
  EXPECT_EQ(f[3], "");
}

TEST(Csv, EscapeRoundTrips) {
  for (std::string s : {"plain", "with,comma", "quote\"inside", ""}) {
    auto f = io::split_csv_line(io::csv_escape(s));
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0], s);
  }
}

TEST(Csv, ParsesTableAndSkipsBlankLines) {
  auto t = io::parse_csv("x,y\r\n1,2\n\n3,4\n", "test");
  ASSERT_EQ(t.header.size(), 2u);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1][0], "3");
  EXPECT_EQ(t.lines[1], 4u);
  EXPECT_EQ(t.require_column("y", "test"), 1u);
  EXPECT_THROW(t.require_column("z", "test"), Error);
}

TEST(Csv, RaggedRowIsAParseError) {
  EXPECT_THROW(io::parse_csv("x,y\n1\n", "test"), ParseError);
}

TEST(Numbers, ParseDouble) {
  EXPECT_EQ(io::parse_double(" 2.5 "), 2.5);
  EXPECT_EQ(io::parse_double("-1e3"), -1000.0);
  EXPECT_FALSE(io::parse_double("abc"));
  EXPECT_FALSE(io::parse_double("1.5x"));
  EXPECT_FALSE(io::parse_double(""));
}

TEST(Numbers, FormatRoundTripsExactly) {
  for (double v : {0.1, 1.0 / 3.0, 12345.678, -2.5e-300}) {
    EXPECT_EQ(*io::parse_double(io::format_double(v)), v);
  }
  EXPECT_EQ(io::format_optional(std::nullopt), "");
}

TEST(Numbers, RoundSignificant) {
  EXPECT_DOUBLE_EQ(io::round_significant(123456789.123, 3), 123000000.0);
  EXPECT_DOUBLE_EQ(io::round_significant(0.000123456, 2), 0.00012);
}

TEST(Files, WriteThenRead) {
  auto dir = std::filesystem::temp_directory_path() / "concentra_test_io";
  std::filesystem::create_directories(dir);
  auto path = (dir / "f.txt").string();
  io::write_file(path, "hello\n");
  EXPECT_EQ(io::read_file(path), "hello\n");
  EXPECT_THROW(io::read_file((dir / "missing.txt").string()), Error);
  std::filesystem::remove_all(dir);
}

TEST(Rng, StreamsAreNamedAndReproducible) {
  EXPECT_EQ(stream_seed(7, "a", 0), stream_seed(7, "a", 0));
  EXPECT_NE(stream_seed(7, "a", 0), stream_seed(7, "a", 1));
  EXPECT_NE(stream_seed(7, "a", 0), stream_seed(7, "b", 0));
  EXPECT_NE(stream_seed(7, "a", 0), stream_seed(8, "a", 0));
  auto r1 = make_stream(42, "x");
  auto r2 = make_stream(42, "x");
  for (int k = 0; k < 10; ++k) EXPECT_EQ(r1(), r2());
}

TEST(Errors, ExitCodesByKind) {
  EXPECT_EQ(exit_code(ErrorKind::config), 2);
  EXPECT_EQ(exit_code(ErrorKind::contract), 2);
  EXPECT_EQ(exit_code(ErrorKind::data), 3);
  EXPECT_EQ(exit_code(ErrorKind::numeric), 4);
}
