#pragma once

#include <string>

#include "arcgen/zoo.hpp"

namespace arcgen::cli {

// Remote probability endpoint: the detect command can audit a model served
// over HTTP instead of a local weights file. Requests are JSON
// {"inputs": [[pixels...], ...]} and responses {"probabilities": [[...], ...]};
// rows are validated as probability simplices.
struct EndpointDescriptor {
  std::string url;       // http://host:port/path
  int batch_size = 32;
  int timeout_ms = 5000;
  int max_retries = 3;   // exponential backoff between attempts
};

zoo::PredictFn remote_blackbox(const EndpointDescriptor& endpoint, int num_classes);

}  // namespace arcgen::cli
