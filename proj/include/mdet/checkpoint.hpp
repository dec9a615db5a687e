#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "mdet/autodiff.hpp"

namespace mdet {

// Text format, one block per parameter:
//
//   param <name> <rank> <dim>...
//   <hex-float values, space separated>
//
// Values are written as C99 hex floats so a round trip is bit-exact.
void write_params(std::ostream& os, const ParamStore& params);

// Reads `count` parameter blocks into a name -> tensor map.
std::map<std::string, Tensor> read_params(std::istream& is, std::size_t count);

// Overwrites every parameter of `params` from `values`; names and shapes must
// match exactly.
void assign_params(ParamStore& params, const std::map<std::string, Tensor>& values);

}  // namespace mdet
