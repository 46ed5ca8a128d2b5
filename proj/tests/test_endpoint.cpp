#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "arcgen/common.hpp"
#include "arcgen/endpoint.hpp"

using namespace arcgen;
using nlohmann::json;

namespace {

// Serves softmax-ish rows derived from the first pixel; bad_mode breaks the
// simplex so validation paths can be exercised.
struct TestServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  bool bad_mode = false;

  explicit TestServer(bool bad = false) : bad_mode(bad) {
    server.Post("/probs", [this](const httplib::Request& req, httplib::Response& res) {
      requests++;
      json in = json::parse(req.body);
      json rows = json::array();
      for (const auto& input : in.at("inputs")) {
        double x = input.at(0).get<double>();
        double a = 0.5 + 0.4 * x;
        json row = json::array();
        if (bad_mode) {
          row = {0.9, 0.9, 0.9};
        } else {
          row = {a, (1.0 - a) / 2.0, (1.0 - a) / 2.0};
        }
        rows.push_back(row);
      }
      res.set_content(json{{"probabilities", rows}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("remote blackbox: valid rows pass through with batching") {
  TestServer srv;
  cli::EndpointDescriptor ep;
  ep.url = "http://127.0.0.1:" + std::to_string(srv.port) + "/probs";
  ep.batch_size = 2;
  auto fn = cli::remote_blackbox(ep, 3);
  nn::Tensor q({5, 1, 1, 1});
  for (int i = 0; i < 5; ++i) q.v[static_cast<size_t>(i)] = 0.1 * i;
  nn::Tensor probs = fn(q);
  CHECK(probs.dims == std::vector<int>{5, 3});
  for (int i = 0; i < 5; ++i) {
    double sum = 0;
    for (int c = 0; c < 3; ++c) sum += probs.row(i)[c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(srv.requests.load() == 3);  // ceil(5 / 2) batches
}

TEST_CASE("remote blackbox: non-simplex replies are rejected") {
  TestServer srv(/*bad=*/true);
  cli::EndpointDescriptor ep;
  ep.url = "http://127.0.0.1:" + std::to_string(srv.port) + "/probs";
  auto fn = cli::remote_blackbox(ep, 3);
  nn::Tensor q({1, 1, 1, 1});
  CHECK_THROWS_AS(fn(q), NumericalError);
}

TEST_CASE("remote blackbox: unreachable endpoint raises after retries") {
  cli::EndpointDescriptor ep;
  ep.url = "http://127.0.0.1:1/probs";  // nothing listens here
  ep.max_retries = 1;
  ep.timeout_ms = 200;
  auto fn = cli::remote_blackbox(ep, 3);
  nn::Tensor q({1, 1, 1, 1});
  CHECK_THROWS_AS(fn(q), MissingArtifactError);
}

TEST_CASE("non-http scheme is rejected up front") {
  cli::EndpointDescriptor ep;
  ep.url = "https://example.com/probs";
  CHECK_THROWS_AS(cli::remote_blackbox(ep, 3), ConfigError);
}
