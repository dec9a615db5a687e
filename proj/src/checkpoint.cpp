#include "mdet/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mdet {

void write_params(std::ostream& os, const ParamStore& params) {
  char buf[64];
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    os << "param " << p.name << ' ' << p.value.rank();
    for (int d : p.value.shape) os << ' ' << d;
    os << '\n';
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%a", p.value[k]);
      os << (k ? " " : "") << buf;
    }
    os << '\n';
  }
}

std::map<std::string, Tensor> read_params(std::istream& is, std::size_t count) {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string tag, name;
    int rank = 0;
    if (!(is >> tag >> name >> rank) || tag != "param" || rank < 0 || rank > 2) {
      throw std::runtime_error("checkpoint: malformed parameter header #" + std::to_string(i));
    }
    std::vector<int> shape(rank);
    for (int& d : shape) {
      if (!(is >> d) || d < 0) throw std::runtime_error("checkpoint: bad shape for parameter " + name);
    }
    Tensor t(shape);
    std::string tok;
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated values for parameter " + name);
      char* end = nullptr;
      t[k] = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw std::runtime_error("checkpoint: bad value '" + tok + "' in parameter " + name);
      }
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

void assign_params(ParamStore& params, const std::map<std::string, Tensor>& values) {
  if (values.size() != params.size()) {
    throw std::runtime_error("checkpoint: has " + std::to_string(values.size()) + " parameters, model expects " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto it = values.find(p.name);
    if (it == values.end()) throw std::runtime_error("checkpoint: missing parameter " + p.name);
    if (it->second.shape != p.value.shape) {
      throw std::runtime_error("checkpoint: parameter " + p.name + " has shape " + it->second.shape_str() +
                               ", model expects " + p.value.shape_str());
    }
    p.value = it->second;
  }
}

}  // namespace mdet
