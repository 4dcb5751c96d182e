#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "facecond/config.hpp"
#include "facecond/numerics/graph.hpp"
#include "facecond/numerics/rng.hpp"

namespace facecond {

// Named parameter tensors. std::map keeps names lexicographically sorted,
// which is also the checkpoint order.
template <class T>
using ParamMap = std::map<std::string, BasicTensor<T>>;
using Params = ParamMap<float>;

// Ownership groups, derived from the name prefix:
//   fixed.*          frozen stand-ins for pretrained encoders (never trained)
//   base.*           the video DiT (trained only in base pretraining)
//   adapter.face.*   structural branch: face query, face perceiver, face
//                    modulation, decoupled cross-attention
//   adapter.id.*     identity branch: id perceiver and fusion MLP
//   adapter.can.*    conditioned adaptive normalization
enum class ParamGroup { Fixed, Base, FaceBranch, IdBranch, Can };

ParamGroup param_group(std::string_view name);
std::string to_string(ParamGroup g);

std::string block_name(int layer);                  // "block.<l>"
bool has_adapter(int layer);                        // even layer index

// Builds every tensor for the config. Each tensor draws from its own named
// substream of init_rng, so the set of names fixes the values.
Params init_params(const Config& config, RngState init_rng);

template <class U, class T>
ParamMap<U> cast_params(const ParamMap<T>& in) {
  ParamMap<U> out;
  for (const auto& [name, t] : in) out.emplace(name, t.template cast<U>());
  return out;
}

// Which names receive gradients.
using TrainablePredicate = std::function<bool(const std::string&)>;

// Puts parameters onto a graph on first use and remembers their handles.
template <class T>
class ParamBinder {
 public:
  ParamBinder(Graph<T>& graph, const ParamMap<T>& params, TrainablePredicate trainable = {})
      : graph_(graph), params_(params), trainable_(std::move(trainable)) {}

  Var operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw ContractError("unknown parameter '" + name + "'");
    const bool rg = trainable_ && trainable_(name);
    Var v = graph_.leaf(p->second, rg);
    bound_.emplace(name, v);
    return v;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const BasicTensor<T>& tensor(const std::string& name) const { return params_.at(name); }
  Graph<T>& graph() { return graph_; }
  const ParamMap<T>& params() const { return params_; }
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Graph<T>& graph_;
  const ParamMap<T>& params_;
  TrainablePredicate trainable_;
  std::map<std::string, Var> bound_;
};

}  // namespace facecond
