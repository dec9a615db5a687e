#include "mdet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mdet {

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + mdet::shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) { return Tensor({rows, cols}, std::move(v)); }

std::string Tensor::shape_str() const { return mdet::shape_str(shape); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---- ParamStore ------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, std::vector<int> shape, double fill) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape, fill);
  p->grad = Tensor(shape, 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::add_uniform(const std::string& name, std::vector<int> shape, Rng& rng, double scale) {
  Parameter& p = add(name, std::move(shape));
  for (double& v : p.value.data) v = rng.uniform(-scale, scale);
  return p;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParamStore::get(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw std::out_of_range("unknown parameter: " + name);
  return *p;
}

const Parameter& ParamStore::get(const std::string& name) const {
  const Parameter* p = find(name);
  if (!p) throw std::out_of_range("unknown parameter: " + name);
  return *p;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& p : params_) {
    const Parameter& q = other.get(p->name);
    if (q.value.shape != p->value.shape) {
      throw ShapeError("parameter " + p->name + " shape " + p->value.shape_str() + " vs " + q.value.shape_str());
    }
    p->value = q.value;
  }
}

// ---- Graph -----------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(id); }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) throw ShapeError("item() on tensor of shape " + t.shape_str());
  return t.data[0];
}

Var Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&p] = id;
  return Var{this, id};
}

Var Graph::add_node(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::logic_error("operation mixes nodes from different graphs");
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.data.empty() && !n.value.data.empty()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::logic_error("backward on a node of another graph");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + value(loss.id).shape_str());
  }
  if (backward_done_) throw std::logic_error("backward called twice on the same graph");
  backward_done_ = true;
  grad(loss.id).data[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.data.empty()) continue;
    n.backward(*this, i);
  }
}

// ---- ops -------------------------------------------------------------------

namespace {

Graph& graph_of(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (!v.valid()) throw std::logic_error("operation on an invalid Var");
  }
  return *vs.begin()->graph;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx_from_xy) {
  Graph& g = graph_of({a});
  const Tensor& x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int ia = a.id;
  return g.add_node(std::move(y), {a}, [ia, dfdx_from_xy](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * dfdx_from_xy(x[i], y[i]);
  });
}

double stable_sigmoid(double z) {
  double s;
  if (z >= 0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  // Keep the output strictly inside (0, 1) even when it rounds to an endpoint.
  constexpr double kTop = 1.0 - 0x1.0p-53;
  if (s >= 1.0) s = kTop;
  if (s <= 0.0) s = std::numeric_limits<double>::denorm_min();
  return s;
}

double stable_log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

Var linear(Var x, Var w, Var b) {
  Graph& g = graph_of({x, w});
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (W.rank() != 2 || (X.rank() != 1 && X.rank() != 2) || X.cols() != W.cols()) {
    throw ShapeError("linear: input " + X.shape_str() + " incompatible with weight " + W.shape_str());
  }
  const int n = X.rows(), in = W.cols(), out = W.rows();
  const bool has_bias = b.valid();
  if (has_bias) {
    const Tensor& B = b.value();
    if (B.rank() != 1 || B.shape[0] != out) {
      throw ShapeError("linear: bias " + B.shape_str() + " incompatible with weight " + W.shape_str());
    }
  }
  Tensor Y(X.rank() == 1 ? std::vector<int>{out} : std::vector<int>{n, out});
  for (int r = 0; r < n; ++r) {
    const double* xr = X.data.data() + static_cast<std::size_t>(r) * in;
    double* yr = Y.data.data() + static_cast<std::size_t>(r) * out;
    for (int o = 0; o < out; ++o) {
      const double* wo = W.data.data() + static_cast<std::size_t>(o) * in;
      double acc = has_bias ? b.value()[o] : 0.0;
      for (int k = 0; k < in; ++k) acc += wo[k] * xr[k];
      yr[o] = acc;
    }
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  const int ix = x.id, iw = w.id, ib = has_bias ? b.id : -1;
  return g.add_node(std::move(Y), inputs, [ix, iw, ib, n, in, out](Graph& g, int self) {
    const Tensor& X = g.value(ix);
    const Tensor& W = g.value(iw);
    const Tensor& GY = g.grad(self);
    if (g.requires_grad(ix)) {
      Tensor& GX = g.grad(ix);
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out; ++o) {
          const double gy = GY[static_cast<std::size_t>(r) * out + o];
          if (gy == 0.0) continue;
          const double* wo = W.data.data() + static_cast<std::size_t>(o) * in;
          double* gx = GX.data.data() + static_cast<std::size_t>(r) * in;
          for (int k = 0; k < in; ++k) gx[k] += gy * wo[k];
        }
    }
    if (g.requires_grad(iw)) {
      Tensor& GW = g.grad(iw);
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out; ++o) {
          const double gy = GY[static_cast<std::size_t>(r) * out + o];
          if (gy == 0.0) continue;
          const double* xr = X.data.data() + static_cast<std::size_t>(r) * in;
          double* gw = GW.data.data() + static_cast<std::size_t>(o) * in;
          for (int k = 0; k < in; ++k) gw[k] += gy * xr[k];
        }
    }
    if (ib >= 0 && g.requires_grad(ib)) {
      Tensor& GB = g.grad(ib);
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out; ++o) GB[o] += GY[static_cast<std::size_t>(r) * out + o];
    }
  });
}

namespace {

template <typename F, typename GA, typename GB>
Var binary(const char* name, Var a, Var b, F f, GA da, GB db) {
  Graph& g = graph_of({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(name, A, B);
  Tensor Y(A.shape);
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = f(A[i], B[i]);
  const int ia = a.id, ib = b.id;
  return g.add_node(std::move(Y), {a, b}, [ia, ib, da, db](Graph& g, int self) {
    const Tensor& A = g.value(ia);
    const Tensor& B = g.value(ib);
    const Tensor& GY = g.grad(self);
    if (g.requires_grad(ia)) {
      Tensor& GA_ = g.grad(ia);
      for (std::size_t i = 0; i < A.size(); ++i) GA_[i] += GY[i] * da(A[i], B[i]);
    }
    if (g.requires_grad(ib)) {
      Tensor& GB_ = g.grad(ib);
      for (std::size_t i = 0; i < B.size(); ++i) GB_[i] += GY[i] * db(A[i], B[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var log_sigmoid(Var a) {
  return unary(a, stable_log_sigmoid, [](double x, double) { return stable_sigmoid(-x); });
}

namespace {

Var softmax_impl(Var a, bool log_space) {
  Graph& g = graph_of({a});
  const Tensor& X = a.value();
  if (X.rank() < 1 || X.rank() > 2) throw ShapeError("softmax: expected rank 1 or 2, got " + X.shape_str());
  const int rows = X.rows(), cols = X.cols();
  Tensor Y(X.shape);
  for (int r = 0; r < rows; ++r) {
    const double* x = X.data.data() + static_cast<std::size_t>(r) * cols;
    double* y = Y.data.data() + static_cast<std::size_t>(r) * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lz = std::log(z);
    for (int c = 0; c < cols; ++c) y[c] = log_space ? x[c] - mx - lz : std::exp(x[c] - mx) / z;
  }
  const int ia = a.id;
  return g.add_node(std::move(Y), {a}, [ia, rows, cols, log_space](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& Y = g.value(self);
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ia);
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      if (log_space) {
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += GY[off + c];
        for (int c = 0; c < cols; ++c) GX[off + c] += GY[off + c] - std::exp(Y[off + c]) * s;
      } else {
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += GY[off + c] * Y[off + c];
        for (int c = 0; c < cols; ++c) GX[off + c] += Y[off + c] * (GY[off + c] - s);
      }
    }
  });
}

}  // namespace

Var softmax(Var a) { return softmax_impl(a, false); }
Var log_softmax(Var a) { return softmax_impl(a, true); }

Var sum(Var a) {
  Graph& g = graph_of({a});
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const int ia = a.id;
  return g.add_node(Tensor::scalar(s), {a}, [ia](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const double gy = g.grad(self)[0];
    for (double& v : g.grad(ia).data) v += gy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var dot(Var a, Var b) {
  Graph& g = graph_of({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.size() != B.size()) throw ShapeError("dot: size mismatch " + A.shape_str() + " vs " + B.shape_str());
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
  const int ia = a.id, ib = b.id;
  return g.add_node(Tensor::scalar(s), {a, b}, [ia, ib](Graph& g, int self) {
    const double gy = g.grad(self)[0];
    if (g.requires_grad(ia)) {
      const Tensor& B = g.value(ib);
      Tensor& GA = g.grad(ia);
      for (std::size_t i = 0; i < B.size(); ++i) GA[i] += gy * B[i];
    }
    if (g.requires_grad(ib)) {
      const Tensor& A = g.value(ia);
      Tensor& GB = g.grad(ib);
      for (std::size_t i = 0; i < A.size(); ++i) GB[i] += gy * A[i];
    }
  });
}

Var pick(Var a, int index) {
  Graph& g = graph_of({a});
  if (index < 0 || static_cast<std::size_t>(index) >= a.size()) {
    throw ShapeError("pick: index " + std::to_string(index) + " out of range for " + a.value().shape_str());
  }
  const int ia = a.id;
  return g.add_node(Tensor::scalar(a.value()[index]), {a}, [ia, index](Graph& g, int self) {
    if (g.requires_grad(ia)) g.grad(ia)[index] += g.grad(self)[0];
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Graph& g = *parts.front().graph;
  std::vector<double> out;
  std::vector<std::pair<int, std::size_t>> layout;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() > 1) throw ShapeError("concat: expected rank <= 1, got " + t.shape_str());
    layout.emplace_back(p.id, out.size());
    out.insert(out.end(), t.data.begin(), t.data.end());
  }
  Tensor y = Tensor::vector(std::move(out));
  return g.add_node(std::move(y), parts, [layout](Graph& g, int self) {
    const Tensor& GY = g.grad(self);
    for (const auto& [id, off] : layout) {
      if (!g.requires_grad(id)) continue;
      Tensor& GX = g.grad(id);
      for (std::size_t i = 0; i < GX.size(); ++i) GX[i] += GY[off + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  Graph& g = *parts.front().graph;
  const int rows = parts.front().value().rows();
  int cols = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() != 2 || t.rows() != rows) {
      throw ShapeError("concat_cols: part " + t.shape_str() + " does not have " + std::to_string(rows) + " rows");
    }
    cols += t.cols();
  }
  Tensor Y({rows, cols});
  std::vector<std::pair<int, int>> layout;
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    for (int r = 0; r < rows; ++r)
      std::copy_n(t.data.data() + static_cast<std::size_t>(r) * t.cols(), t.cols(),
                  Y.data.data() + static_cast<std::size_t>(r) * cols + off);
    layout.emplace_back(p.id, off);
    off += t.cols();
  }
  return g.add_node(std::move(Y), parts, [layout, rows, cols](Graph& g, int self) {
    const Tensor& GY = g.grad(self);
    for (const auto& [id, off] : layout) {
      if (!g.requires_grad(id)) continue;
      Tensor& GX = g.grad(id);
      const int c = GX.cols();
      for (int r = 0; r < rows; ++r)
        for (int k = 0; k < c; ++k) GX[static_cast<std::size_t>(r) * c + k] += GY[static_cast<std::size_t>(r) * cols + off + k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
  Graph& g = *parts.front().graph;
  const int cols = parts.front().value().cols();
  int rows = 0;
  std::vector<double> out;
  std::vector<std::pair<int, std::size_t>> layout;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() != 2 || t.cols() != cols) {
      throw ShapeError("concat_rows: part " + t.shape_str() + " does not have " + std::to_string(cols) + " cols");
    }
    layout.emplace_back(p.id, out.size());
    out.insert(out.end(), t.data.begin(), t.data.end());
    rows += t.rows();
  }
  return g.add_node(Tensor({rows, cols}, std::move(out)), parts, [layout](Graph& g, int self) {
    const Tensor& GY = g.grad(self);
    for (const auto& [id, off] : layout) {
      if (!g.requires_grad(id)) continue;
      Tensor& GX = g.grad(id);
      for (std::size_t i = 0; i < GX.size(); ++i) GX[i] += GY[off + i];
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows of zero tensors");
  Graph& g = *rows.front().graph;
  const std::size_t cols = rows.front().size();
  std::vector<double> out;
  out.reserve(cols * rows.size());
  std::vector<int> ids;
  for (const Var& r : rows) {
    const Tensor& t = r.value();
    if (t.rank() != 1 || t.size() != cols) {
      throw ShapeError("stack_rows: row " + t.shape_str() + " is not a vector of " + std::to_string(cols));
    }
    out.insert(out.end(), t.data.begin(), t.data.end());
    ids.push_back(r.id);
  }
  Tensor Y({static_cast<int>(rows.size()), static_cast<int>(cols)}, std::move(out));
  return g.add_node(std::move(Y), rows, [ids, cols](Graph& g, int self) {
    const Tensor& GY = g.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!g.requires_grad(ids[r])) continue;
      Tensor& GX = g.grad(ids[r]);
      for (std::size_t k = 0; k < cols; ++k) GX[k] += GY[r * cols + k];
    }
  });
}

Var slice(Var a, int offset, int length) {
  Graph& g = graph_of({a});
  const Tensor& X = a.value();
  if (X.rank() != 1 || offset < 0 || length < 0 || static_cast<std::size_t>(offset + length) > X.size()) {
    throw ShapeError("slice: [" + std::to_string(offset) + ", +" + std::to_string(length) + ") out of range for " +
                     X.shape_str());
  }
  std::vector<double> out(X.data.begin() + offset, X.data.begin() + offset + length);
  const int ia = a.id;
  return g.add_node(Tensor::vector(std::move(out)), {a}, [ia, offset, length](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ia);
    for (int i = 0; i < length; ++i) GX[offset + i] += GY[i];
  });
}

Var row(Var a, int r) {
  Graph& g = graph_of({a});
  const Tensor& X = a.value();
  if (X.rank() != 2 || r < 0 || r >= X.rows()) {
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " + X.shape_str());
  }
  const int cols = X.cols();
  std::vector<double> out(X.data.begin() + static_cast<std::ptrdiff_t>(r) * cols,
                          X.data.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
  const int ia = a.id;
  return g.add_node(Tensor::vector(std::move(out)), {a}, [ia, r, cols](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ia);
    for (int k = 0; k < cols; ++k) GX[static_cast<std::size_t>(r) * cols + k] += GY[k];
  });
}

Var reshape(Var a, std::vector<int> shape) {
  Graph& g = graph_of({a});
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + a.value().shape_str() + " to " + shape_str(shape));
  }
  const int ia = a.id;
  return g.add_node(Tensor(std::move(shape), a.value().data), {a}, [ia](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ia);
    for (std::size_t i = 0; i < GX.size(); ++i) GX[i] += GY[i];
  });
}

Var gather(Var a, const std::vector<int>& index) {
  Graph& g = graph_of({a});
  const Tensor& X = a.value();
  if (X.rank() < 1 || X.rank() > 2) throw ShapeError("gather: expected rank 1 or 2, got " + X.shape_str());
  const int n = X.rank() == 2 ? X.rows() : X.cols();
  const int width = X.rank() == 2 ? X.cols() : 1;
  std::vector<double> out;
  out.reserve(index.size() * width);
  for (int i : index) {
    if (i < 0 || i >= n) throw ShapeError("gather: index " + std::to_string(i) + " out of range for " + X.shape_str());
    out.insert(out.end(), X.data.begin() + static_cast<std::ptrdiff_t>(i) * width,
               X.data.begin() + static_cast<std::ptrdiff_t>(i + 1) * width);
  }
  const int count = static_cast<int>(index.size());
  Tensor Y = X.rank() == 2 ? Tensor({count, width}, std::move(out)) : Tensor({count}, std::move(out));
  const int ia = a.id;
  return g.add_node(std::move(Y), {a}, [ia, index, width](Graph& g, int self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ia);
    for (std::size_t r = 0; r < index.size(); ++r)
      for (int k = 0; k < width; ++k) GX[static_cast<std::size_t>(index[r]) * width + k] += GY[r * width + k];
  });
}

namespace {

void check_spans(const char* op, const Tensor& X, const std::vector<int>& starts, const std::vector<int>& ends) {
  if (X.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + X.shape_str());
  if (starts.size() != ends.size() || starts.empty()) {
    throw ShapeError(std::string(op) + ": need a nonempty, equal number of starts and ends");
  }
  for (std::size_t n = 0; n < starts.size(); ++n) {
    if (starts[n] < 0 || starts[n] > ends[n] || ends[n] >= X.rows()) {
      throw ShapeError(std::string(op) + ": span (" + std::to_string(starts[n]) + "," + std::to_string(ends[n]) +
                       ") out of range for " + X.shape_str());
    }
  }
}

}  // namespace

Var span_mean(Var x, const std::vector<int>& starts, const std::vector<int>& ends) {
  Graph& g = graph_of({x});
  const Tensor& X = x.value();
  check_spans("span_mean", X, starts, ends);
  const int d = X.cols(), n = static_cast<int>(starts.size());
  Tensor Y({n, d});
  for (int s = 0; s < n; ++s) {
    const double inv = 1.0 / static_cast<double>(ends[s] - starts[s] + 1);
    double* y = Y.data.data() + static_cast<std::size_t>(s) * d;
    for (int k = starts[s]; k <= ends[s]; ++k)
      for (int c = 0; c < d; ++c) y[c] += X.at(k, c);
    for (int c = 0; c < d; ++c) y[c] *= inv;
  }
  const int ix = x.id;
  return g.add_node(std::move(Y), {x}, [ix, starts, ends, d](Graph& g, int self) {
    if (!g.requires_grad(ix)) return;
    const Tensor& GY = g.grad(self);
    Tensor& GX = g.grad(ix);
    for (std::size_t s = 0; s < starts.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(ends[s] - starts[s] + 1);
      for (int k = starts[s]; k <= ends[s]; ++k)
        for (int c = 0; c < d; ++c) GX[static_cast<std::size_t>(k) * d + c] += inv * GY[s * d + c];
    }
  });
}

Var span_attention(Var x, Var logits, const std::vector<int>& starts, const std::vector<int>& ends) {
  Graph& g = graph_of({x, logits});
  const Tensor& X = x.value();
  const Tensor& L = logits.value();
  check_spans("span_attention", X, starts, ends);
  if (L.size() != static_cast<std::size_t>(X.rows())) {
    throw ShapeError("span_attention: " + std::to_string(L.size()) + " logits for " + X.shape_str());
  }
  const int d = X.cols(), n = static_cast<int>(starts.size());
  Tensor Y({n, d});
  // Per-span attention weights, flattened in span order.
  std::vector<double> weights;
  for (int s = 0; s < n; ++s) {
    double mx = L[starts[s]];
    for (int k = starts[s]; k <= ends[s]; ++k) mx = std::max(mx, L[k]);
    double z = 0.0;
    for (int k = starts[s]; k <= ends[s]; ++k) z += std::exp(L[k] - mx);
    double* y = Y.data.data() + static_cast<std::size_t>(s) * d;
    for (int k = starts[s]; k <= ends[s]; ++k) {
      const double a = std::exp(L[k] - mx) / z;
      weights.push_back(a);
      for (int c = 0; c < d; ++c) y[c] += a * X.at(k, c);
    }
  }
  const int ix = x.id, il = logits.id;
  return g.add_node(std::move(Y), {x, logits}, [ix, il, starts, ends, d, weights](Graph& g, int self) {
    const Tensor& X = g.value(ix);
    const Tensor& Y = g.value(self);
    const Tensor& GY = g.grad(self);
    std::size_t w = 0;
    for (std::size_t s = 0; s < starts.size(); ++s) {
      const double* gy = GY.data.data() + s * d;
      const double* y = Y.data.data() + s * d;
      double gy_dot_y = 0.0;
      for (int c = 0; c < d; ++c) gy_dot_y += gy[c] * y[c];
      for (int k = starts[s]; k <= ends[s]; ++k, ++w) {
        const double a = weights[w];
        if (g.requires_grad(ix)) {
          Tensor& GX = g.grad(ix);
          for (int c = 0; c < d; ++c) GX[static_cast<std::size_t>(k) * d + c] += a * gy[c];
        }
        if (g.requires_grad(il)) {
          double gy_dot_x = 0.0;
          for (int c = 0; c < d; ++c) gy_dot_x += gy[c] * X.at(k, c);
          g.grad(il)[k] += a * (gy_dot_x - gy_dot_y);
        }
      }
    }
  });
}

}  // namespace mdet
