#include "mdet/nn.hpp"

#include <stdexcept>

namespace mdet::nn {

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias)
    : in_(in), out_(out) {
  w_ = &store.add_uniform(name + ".W", {out, in}, rng);
  if (bias) b_ = &store.add_uniform(name + ".b", {out}, rng);
}

Var Linear::operator()(Graph& g, Var x) const {
  return linear(x, g.param(*w_), b_ ? g.param(*b_) : Var{});
}

Embedding::Embedding(ParamStore& store, const std::string& name, int vocab, int dim, Rng& rng)
    : vocab_(vocab), dim_(dim) {
  table_ = &store.add_uniform(name, {vocab, dim}, rng);
}

Var Embedding::lookup(Graph& g, const std::vector<int>& ids) const { return gather(g.param(*table_), ids); }

LstmCell::LstmCell(ParamStore& store, const std::string& name, int in, int hidden, Rng& rng)
    : in_(in), hidden_(hidden) {
  w_ = &store.add_uniform(name + ".W", {4 * hidden, in + hidden}, rng);
  b_ = &store.add_uniform(name + ".b", {4 * hidden}, rng);
  for (int k = hidden; k < 2 * hidden; ++k) b_->value[k] = 1.0;
}

LstmState LstmCell::zero_state(Graph& g) const {
  return {g.constant(Tensor({hidden_})), g.constant(Tensor({hidden_}))};
}

LstmState LstmCell::step(Graph& g, Var x, const LstmState& state) const {
  if (x.value().rank() != 1 || static_cast<int>(x.size()) != in_) {
    throw ShapeError("lstm_step: input " + x.value().shape_str() + " but cell expects [" + std::to_string(in_) + "]");
  }
  if (static_cast<int>(state.h.size()) != hidden_ || static_cast<int>(state.c.size()) != hidden_) {
    throw ShapeError("lstm_step: state " + state.h.value().shape_str() + "/" + state.c.value().shape_str() +
                     " but cell hidden size is " + std::to_string(hidden_));
  }
  const int H = hidden_;
  Var z = linear(concat({x, state.h}), g.param(*w_), g.param(*b_));
  Var i = sigmoid(slice(z, 0, H));
  Var f = sigmoid(slice(z, H, H));
  Var cand = tanh(slice(z, 2 * H, H));
  Var o = sigmoid(slice(z, 3 * H, H));
  Var c = add(mul(f, state.c), mul(i, cand));
  Var h = mul(o, tanh(c));
  return {h, c};
}

BiLstm::BiLstm(ParamStore& store, const std::string& name, int in, int hidden, Rng& rng)
    : forward_(store, name + ".fwd", in, hidden, rng), backward_(store, name + ".bwd", in, hidden, rng) {}

BiLstmOutput BiLstm::encode(Graph& g, const std::vector<Var>& inputs) const {
  if (inputs.empty()) throw std::invalid_argument("bilstm_encode: empty sentence");
  const std::size_t m = inputs.size();
  BiLstmOutput out;
  out.forward.resize(m);
  out.backward.resize(m);
  LstmState s = forward_.zero_state(g);
  for (std::size_t t = 0; t < m; ++t) out.forward[t] = s = forward_.step(g, inputs[t], s);
  s = backward_.zero_state(g);
  for (std::size_t t = m; t-- > 0;) out.backward[t] = s = backward_.step(g, inputs[t], s);
  out.states.reserve(m);
  for (std::size_t t = 0; t < m; ++t) out.states.push_back(concat({out.forward[t].h, out.backward[t].h}));
  return out;
}

Encoder::Encoder(ParamStore& store, const std::string& name, int vocab, int d_emb, int hidden, Rng& rng)
    : embedding_(store, name + ".emb", vocab, d_emb, rng), bilstm_(store, name + ".bilstm", d_emb, hidden, rng) {}

EncodedUnit Encoder::encode(Graph& g, const std::vector<int>& token_ids) const {
  if (token_ids.empty()) throw std::invalid_argument("encode: empty sentence");
  EncodedUnit u;
  u.embeddings = embedding_.lookup(g, token_ids);
  std::vector<Var> xs;
  xs.reserve(token_ids.size());
  for (std::size_t i = 0; i < token_ids.size(); ++i) xs.push_back(row(u.embeddings, static_cast<int>(i)));
  BiLstmOutput b = bilstm_.encode(g, xs);
  u.state_rows = std::move(b.states);
  u.states = stack_rows(u.state_rows);
  u.last_state = u.state_rows.back();
  return u;
}

}  // namespace mdet::nn
