#pragma once

#include <string>
#include <vector>

#include "mdet/autodiff.hpp"

namespace mdet::nn {

// Feed-forward layer y = W x + b.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias = true);

  Var operator()(Graph& g, Var x) const;
  int in() const { return in_; }
  int out() const { return out_; }
  Parameter& weight() const { return *w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0, out_ = 0;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore& store, const std::string& name, int vocab, int dim, Rng& rng);

  // (ids.size() x dim)
  Var lookup(Graph& g, const std::vector<int>& ids) const;
  int vocab() const { return vocab_; }
  int dim() const { return dim_; }
  Parameter& table() const { return *table_; }

 private:
  Parameter* table_ = nullptr;
  int vocab_ = 0, dim_ = 0;
};

struct LstmState {
  Var h;
  Var c;
};

// Standard LSTM cell. One weight block W of shape (4H x (in + H)) with gate
// rows ordered input, forget, cell candidate, output; forget bias starts at 1.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamStore& store, const std::string& name, int in, int hidden, Rng& rng);

  LstmState step(Graph& g, Var x, const LstmState& state) const;
  LstmState zero_state(Graph& g) const;
  int in() const { return in_; }
  int hidden() const { return hidden_; }
  Parameter& weight() const { return *w_; }
  Parameter& bias() const { return *b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0, hidden_ = 0;
};

struct BiLstmOutput {
  // h_i = [forward_i ; backward_i], each of size 2H.
  std::vector<Var> states;
  std::vector<LstmState> forward;
  std::vector<LstmState> backward;
};

class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParamStore& store, const std::string& name, int in, int hidden, Rng& rng);

  BiLstmOutput encode(Graph& g, const std::vector<Var>& inputs) const;
  int out_dim() const { return 2 * forward_.hidden(); }
  const LstmCell& forward_cell() const { return forward_; }
  const LstmCell& backward_cell() const { return backward_; }

 private:
  LstmCell forward_;
  LstmCell backward_;
};

// Word embeddings contextualized by a BiLSTM; shared between detectors and
// the coreference head.
struct EncodedUnit {
  Var embeddings;  // (M x d_emb)
  Var states;      // (M x 2H)
  std::vector<Var> state_rows;
  Var last_state;  // h_M
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore& store, const std::string& name, int vocab, int d_emb, int hidden, Rng& rng);

  EncodedUnit encode(Graph& g, const std::vector<int>& token_ids) const;
  int emb_dim() const { return embedding_.dim(); }
  int out_dim() const { return bilstm_.out_dim(); }
  int vocab() const { return embedding_.vocab(); }

 private:
  Embedding embedding_;
  BiLstm bilstm_;
};

}  // namespace mdet::nn
