#include "arcgen/endpoint.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "arcgen/common.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace arcgen::cli {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string host_port;  // host or host:port
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0)
    throw ConfigError("endpoint url must start with http:// (got " + url + ")");
  std::string rest = url.substr(scheme.size());
  auto slash = rest.find('/');
  ParsedUrl p;
  p.host_port = slash == std::string::npos ? rest : rest.substr(0, slash);
  p.path = slash == std::string::npos ? "/" : rest.substr(slash);
  if (p.host_port.empty()) throw ConfigError("endpoint url has no host: " + url);
  return p;
}

}  // namespace

zoo::PredictFn remote_blackbox(const EndpointDescriptor& endpoint, int num_classes) {
  ParsedUrl parsed = parse_url(endpoint.url);
  EndpointDescriptor cfg = endpoint;
  return [parsed, cfg, num_classes](const nn::Tensor& images) -> nn::Tensor {
    int n = images.rows();
    int64_t stride = images.stride0();
    nn::Tensor out({n, num_classes});
    for (int start = 0; start < n; start += cfg.batch_size) {
      int end = std::min(n, start + cfg.batch_size);
      json req;
      req["inputs"] = json::array();
      for (int i = start; i < end; ++i) {
        json row = json::array();
        const double* p = images.row(i);
        for (int64_t k = 0; k < stride; ++k) row.push_back(p[k]);
        req["inputs"].push_back(std::move(row));
      }
      std::string body = req.dump();

      json reply;
      bool ok = false;
      std::string last_error;
      for (int attempt = 0; attempt <= cfg.max_retries && !ok; ++attempt) {
        if (attempt > 0)
          std::this_thread::sleep_for(
              std::chrono::milliseconds(100 << (attempt - 1)));
        httplib::Client client(parsed.host_port);
        client.set_connection_timeout(0, cfg.timeout_ms * 1000);
        client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
        auto res = client.Post(parsed.path, body, "application/json");
        if (!res) {
          last_error = "connection failed";
          continue;
        }
        if (res->status != 200) {
          last_error = "http status " + std::to_string(res->status);
          continue;
        }
        try {
          reply = json::parse(res->body);
          ok = true;
        } catch (const json::parse_error& e) {
          last_error = std::string("bad JSON: ") + e.what();
        }
      }
      if (!ok)
        throw MissingArtifactError("endpoint " + cfg.url + " unreachable: " + last_error);

      if (!reply.contains("probabilities") || !reply["probabilities"].is_array() ||
          reply["probabilities"].size() != static_cast<size_t>(end - start))
        throw NumericalError("endpoint reply missing probabilities rows");
      for (int i = start; i < end; ++i) {
        const json& row = reply["probabilities"].at(static_cast<size_t>(i - start));
        if (!row.is_array() || row.size() != static_cast<size_t>(num_classes))
          throw NumericalError("endpoint reply row has wrong class count");
        double sum = 0.0;
        for (int c = 0; c < num_classes; ++c) {
          double v = row.at(static_cast<size_t>(c)).get<double>();
          if (!(v >= 0.0) || !std::isfinite(v))
            throw NumericalError("endpoint reply is not a probability simplex");
          out.row(i)[c] = v;
          sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5)
          throw NumericalError("endpoint reply rows must sum to 1 within 1e-5");
      }
    }
    return out;
  };
}

}  // namespace arcgen::cli
