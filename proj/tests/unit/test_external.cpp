#include <gtest/gtest.h>

#include <filesystem>

#include "wavecal/simulator.hpp"

using namespace wavecal;
namespace fs = std::filesystem;

namespace {

const std::string kEcho = std::string(WAVECAL_SOURCE_DIR) + "/tests/fixtures/echo_sim.py";

ExternalOptions echo_options(const std::string& mode) {
  ExternalOptions o;
  o.command = "python3 " + kEcho + " " + mode;
  o.param_names = {"x1", "x2"};
  o.outputs = {"x1", "x2", "seed", "env_seed"};
  o.timeout = std::chrono::milliseconds(20000);
  return o;
}

std::vector<Point> grid(std::size_t n) {
  std::vector<Point> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back({0.1 * double(i) + 0.001, 1.0 / double(i + 3)});
  return xs;
}

void expect_echo(const std::vector<Point>& xs, const std::vector<PointRun>& r, std::size_t reps, std::uint64_t seed) {
  ASSERT_EQ(r.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ASSERT_TRUE(r[i].ok) << r[i].error;
    ASSERT_EQ(r[i].values.size(), reps);
    for (const auto& rep : r[i].values) {
      EXPECT_EQ(rep[0], xs[i][0]);
      EXPECT_EQ(rep[1], xs[i][1]);
      EXPECT_EQ(rep[2], static_cast<double>(point_seed(seed, xs[i])));
      EXPECT_EQ(rep[3], static_cast<double>(seed));
    }
  }
}

struct Marker {
  fs::path path;
  explicit Marker(const std::string& tag) : path(fs::temp_directory_path() / ("wavecal_marker_" + tag)) {
    fs::remove(path);
  }
  ~Marker() { fs::remove(path); }
};

}  // namespace

TEST(External, EchoRoundTripIsExact) {
  ExternalSimulator sim(echo_options("echo"));
  const auto xs = grid(12);
  expect_echo(xs, sim.run(xs, std::vector<std::size_t>(xs.size(), 3), 42, 2), 3, 42);
}

TEST(External, OutOfOrderResponses) {
  ExternalSimulator sim(echo_options("reverse 4"));
  const auto xs = grid(8);
  expect_echo(xs, sim.run(xs, std::vector<std::size_t>(xs.size(), 2), 9, 1), 2, 9);
}

TEST(External, MalformedLineIsRetried) {
  ExternalSimulator sim(echo_options("malformed"));
  const auto xs = grid(3);
  expect_echo(xs, sim.run(xs, {1, 1, 1}, 5, 1), 1, 5);
}

TEST(External, WrongSchemaIsRetried) {
  ExternalSimulator sim(echo_options("wrong-schema"));
  const auto xs = grid(3);
  expect_echo(xs, sim.run(xs, {2, 2, 2}, 5, 1), 2, 5);
}

TEST(External, DeadChildIsReplaced) {
  Marker m("die");
  auto o = echo_options("die-once");
  o.env["ECHO_MARKER"] = m.path.string();
  ExternalSimulator sim(o);
  const auto xs = grid(4);
  expect_echo(xs, sim.run(xs, {1, 1, 1, 1}, 11, 1), 1, 11);
}

// A timeout is a per-point failure, not retried; the stuck child is replaced
// and the other requests still complete.
TEST(External, HungRequestTimesOut) {
  Marker m("hang");
  auto o = echo_options("hang-once");
  o.env["ECHO_MARKER"] = m.path.string();
  o.timeout = std::chrono::milliseconds(1500);
  ExternalSimulator sim(o);
  const auto xs = grid(3);
  const auto r = sim.run(xs, {1, 1, 1}, 13, 1);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_FALSE(r[0].ok);
  EXPECT_NE(r[0].error.find("timed out"), std::string::npos);
  expect_echo({xs[1], xs[2]}, {r[1], r[2]}, 1, 13);
}

TEST(External, PersistentFailureIsReportedNotThrown) {
  auto o = echo_options("echo");
  o.outputs.push_back("missing");
  ExternalSimulator sim(o);
  const auto xs = grid(2);
  const auto r = sim.run(xs, {1, 1}, 1, 1);
  for (const auto& p : r) {
    EXPECT_FALSE(p.ok);
    EXPECT_FALSE(p.error.empty());
  }
}

TEST(External, MissingCommandFailsEveryPoint) {
  auto o = echo_options("echo");
  o.command = "/nonexistent/simulator";
  ExternalSimulator sim(o);
  const auto r = sim.run(grid(2), {1, 1}, 1, 1);
  for (const auto& p : r) EXPECT_FALSE(p.ok);
}
