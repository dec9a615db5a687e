#pragma once

// Define-by-run reverse-mode automatic differentiation over small dense
// tensors (rank 0..2, row-major, 64-bit). A Graph is built per example,
// backward() is called once, and parameter gradients accumulate into the
// Parameter objects owned by a ParamStore.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdet/rng.hpp"

namespace mdet {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(int rows, int cols, std::vector<double> v);

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  // Rank-2 tensors are (rows x cols); rank-1 are a single row.
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  std::string shape_str() const;
  bool all_finite() const;
};

std::size_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Owns every learned tensor of a model, in insertion order.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, std::vector<int> shape, double fill = 0.0);
  // Uniform init in [-scale, scale].
  Parameter& add_uniform(const std::string& name, std::vector<int> shape, Rng& rng, double scale = 0.1);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t num_values() const;
  // Copies values from another store with identical names and shapes.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  // Leaf aliasing a parameter; gradients flow into p.grad. Repeated calls for
  // the same parameter return the same node.
  Var param(Parameter& p);

  Var add_node(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  void backward(Var loss);

  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer for a node, allocated on first use.
  Tensor& grad(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Parameter* param = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::map<const Parameter*, int> param_nodes_;
  bool backward_done_ = false;
};

// ---- operations ----------------------------------------------------------

// y = x W^T + b. x: (in) or (n x in); W: (out x in); b: (out) or invalid.
Var linear(Var x, Var w, Var b = {});

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
// log(sigmoid(a)), stable for large |a|.
Var log_sigmoid(Var a);

// Row-wise over the last dimension.
Var softmax(Var a);
Var log_softmax(Var a);

Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
Var pick(Var a, int index);

Var concat(const std::vector<Var>& parts);       // rank-1 (or scalar) parts
Var concat_cols(const std::vector<Var>& parts);  // rank-2, same rows
Var concat_rows(const std::vector<Var>& parts);  // rank-2, same cols
Var stack_rows(const std::vector<Var>& rows);    // rank-1 -> rank-2
Var slice(Var a, int offset, int length);        // rank-1
Var row(Var a, int r);                           // rank-2 -> rank-1
Var reshape(Var a, std::vector<int> shape);      // same number of values
// Rows of a rank-2 tensor (or elements of a rank-1 tensor) by index.
Var gather(Var a, const std::vector<int>& index);

// Mean of rows starts[n]..ends[n] (inclusive) of x, one output row per span.
Var span_mean(Var x, const std::vector<int>& starts, const std::vector<int>& ends);
// Attention pooling: softmax of logits[starts[n]..ends[n]] weights the rows of x.
Var span_attention(Var x, Var logits, const std::vector<int>& starts, const std::vector<int>& ends);

}  // namespace mdet
