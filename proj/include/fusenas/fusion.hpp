#pragma once

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fusenas/ops.hpp"

namespace fusenas::fusion {

// Cell DAG topology. Block i can read the two cell inputs and every earlier
// block: local input j, 0 = Z^{l-1}, 1 = Z^{l-2}, 2+k = block k output.
struct CellTopology {
  int blocks = 0;

  explicit CellTopology(int b) : blocks(b) {
    require(b >= 1, "fusion cell needs at least one block");
  }
  int num_inputs(int block) const { return 2 + block; }
  int edge_base(int block) const { return 2 * block + block * (block - 1) / 2; }
  int edge_index(int block, int local) const {
    require(local >= 0 && local < num_inputs(block),
            "edge local index out of range");
    return edge_base(block) + local;
  }
  int edge_count() const { return edge_base(blocks); }
};

struct BlockSpec {
  int block = 0;
  int input1 = 0;
  ops::OperatorKind op1 = ops::OperatorKind::identity;
  int input2 = 1;
  ops::OperatorKind op2 = ops::OperatorKind::identity;
  bool operator==(const BlockSpec&) const = default;
};

using ArchSpec = std::vector<BlockSpec>;

std::string arch_to_text(const ArchSpec& arch);
ArchSpec arch_from_text(const std::string& text);

// Discretization of the relaxation: per block keep the top-2 incoming edges
// ranked by their best non-zero softmax weight, each with its argmax non-zero
// operator. Ties break toward the lower edge then operator index.
ArchSpec derive_architecture(const std::vector<std::vector<double>>& alpha,
                             int blocks,
                             const std::vector<ops::OperatorKind>& kinds);

// One fusion cell: entry 1x1 projections, B mixed-op blocks, concat + exit.
template <typename T>
class FusionCell {
 public:
  FusionCell(ParamStore<T>& store, const std::string& prefix, int in_width,
             int cell_channels, int blocks,
             const std::vector<ops::OperatorKind>& kinds,
             int attn_limit = 4096)
      : topo_(blocks), kinds_(kinds), cell_channels_(cell_channels) {
    require(!kinds.empty(), "fusion cell needs a non-empty operator set");
    entry0_ = ops::Conv<T>(store, prefix + ".entry0", cell_channels, in_width,
                           1);
    entry1_ = ops::Conv<T>(store, prefix + ".entry1", cell_channels, in_width,
                           1);
    exit_ = ops::Conv<T>(store, prefix + ".exit", in_width,
                         cell_channels * blocks, 1);
    for (int e = 0; e < topo_.edge_count(); ++e) {
      std::vector<std::unique_ptr<ops::Operator<T>>> edge_ops;
      for (ops::OperatorKind k : kinds)
        edge_ops.push_back(ops::make_operator<T>(
            k, cell_channels,
            store,
            prefix + ".e" + std::to_string(e) + "." + ops::kind_name(k),
            attn_limit));
      edges_.push_back(std::move(edge_ops));
    }
  }

  const CellTopology& topology() const { return topo_; }
  const std::vector<ops::OperatorKind>& kinds() const { return kinds_; }

  ops::Operator<T>& op(int edge, int kind_index) {
    return *edges_.at(std::size_t(edge)).at(std::size_t(kind_index));
  }

  // softmax-weighted sum of all candidate operators on one edge;
  // weights is the softmaxed (1,1,E,K) tensor
  Var mixed_op(Tape<T>& t, int edge, Var zj, Var weights) {
    Var acc{-1};
    for (std::size_t k = 0; k < kinds_.size(); ++k) {
      if (kinds_[k] == ops::OperatorKind::zero) continue;  // contributes zeros
      Var w = t.element(weights, 0, 0, edge, int(k));
      Var term = t.mul_b(edges_[std::size_t(edge)][k]->forward(t, zj), w);
      acc = acc.valid() ? t.add(acc, term) : term;
    }
    return acc.valid() ? acc : t.zeros(t.shape(zj));
  }

  // sum of mixed-op outputs over every admissible input edge of block i
  Var block_forward(Tape<T>& t, int block, const std::vector<Var>& tensors,
                    Var weights) {
    Var acc{-1};
    for (int j = 0; j < topo_.num_inputs(block); ++j) {
      Var term = mixed_op(t, topo_.edge_index(block, j),
                          tensors[std::size_t(j)], weights);
      acc = acc.valid() ? t.add(acc, term) : term;
    }
    return acc;
  }

  // relaxed (search-mode) cell: Z^l = Cell(Z^{l-1}, Z^{l-2}, alpha)
  Var forward_relaxed(Tape<T>& t, Var z_prev, Var z_prevprev, Var weights) {
    std::vector<Var> tensors = project_inputs(t, z_prev, z_prevprev);
    std::vector<Var> blocks;
    for (int i = 0; i < topo_.blocks; ++i) {
      Var zi = block_forward(t, i, tensors, weights);
      tensors.push_back(zi);
      blocks.push_back(zi);
    }
    return exit_.forward(t, t.concat_channels(blocks));
  }

  // discrete cell using a derived architecture
  Var forward_discrete(Tape<T>& t, Var z_prev, Var z_prevprev,
                       const ArchSpec& arch) {
    require(int(arch.size()) == topo_.blocks,
            "architecture block count does not match the cell");
    std::vector<Var> tensors = project_inputs(t, z_prev, z_prevprev);
    std::vector<Var> blocks;
    for (int i = 0; i < topo_.blocks; ++i) {
      const BlockSpec& spec = arch[std::size_t(i)];
      require(spec.input1 < topo_.num_inputs(i) &&
                  spec.input2 < topo_.num_inputs(i),
              "architecture input index out of range for block " +
                  std::to_string(i));
      Var a = discrete_edge(t, i, spec.input1, spec.op1, tensors);
      Var b = discrete_edge(t, i, spec.input2, spec.op2, tensors);
      Var zi = t.add(a, b);
      tensors.push_back(zi);
      blocks.push_back(zi);
    }
    return exit_.forward(t, t.concat_channels(blocks));
  }

 private:
  CellTopology topo_;
  std::vector<ops::OperatorKind> kinds_;
  int cell_channels_;
  ops::Conv<T> entry0_, entry1_, exit_;
  std::vector<std::vector<std::unique_ptr<ops::Operator<T>>>> edges_;

  std::vector<Var> project_inputs(Tape<T>& t, Var z_prev, Var z_prevprev) {
    return {entry0_.forward(t, z_prev), entry1_.forward(t, z_prevprev)};
  }

  Var discrete_edge(Tape<T>& t, int block, int local, ops::OperatorKind kind,
                    const std::vector<Var>& tensors) {
    int e = topo_.edge_index(block, local);
    for (std::size_t k = 0; k < kinds_.size(); ++k)
      if (kinds_[k] == kind)
        return edges_[std::size_t(e)][k]->forward(t, tensors[std::size_t(local)]);
    fail(std::string("operator ") + ops::kind_name(kind) +
         " not present in this cell's registry");
  }
};

// Chain of L cells. The two seeds Z^0 and Z^{-1} are 1x1 projections of the
// fusion input; alpha logits are shared across cells by default.
template <typename T>
class FusionNetwork {
 public:
  FusionNetwork(ParamStore<T>& store, const std::string& prefix, int in_width,
                int width, int cell_channels, int blocks, int cells,
                const std::vector<ops::OperatorKind>& kinds,
                bool alpha_per_cell = false, int attn_limit = 4096)
      : kinds_(kinds), alpha_per_cell_(alpha_per_cell) {
    require(cells >= 1, "fusion network needs at least one cell");
    seed0_ = ops::Conv<T>(store, prefix + ".seed0", width, in_width, 1);
    seed1_ = ops::Conv<T>(store, prefix + ".seed1", width, in_width, 1);
    CellTopology topo(blocks);
    const Shape alpha_shape(1, 1, topo.edge_count(), int(kinds.size()));
    if (alpha_per_cell) {
      for (int l = 0; l < cells; ++l)
        alphas_.push_back(&store.create(
            prefix + ".cell" + std::to_string(l) + ".alpha", alpha_shape,
            Init::zeros));
    } else {
      alphas_.push_back(&store.create(prefix + ".alpha", alpha_shape,
                                      Init::zeros));
    }
    for (int l = 0; l < cells; ++l)
      cells_.push_back(std::make_unique<FusionCell<T>>(
          store, prefix + ".cell" + std::to_string(l), width, cell_channels,
          blocks, kinds, attn_limit));
  }

  // Cell inputs are RMS-normalized per sample before every cell: block
  // outputs are sums over all incoming edges, so the raw chain would compound
  // its gain exponentially with depth.
  Var forward_relaxed(Tape<T>& t, Var fusion_input) {
    Var z_pp = seed0_.forward(t, fusion_input);
    Var z_p = seed1_.forward(t, fusion_input);
    std::vector<Var> weights;
    for (auto* a : alphas_) weights.push_back(t.softmax_rows(t.param(*a)));
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      Var w = alpha_per_cell_ ? weights[l] : weights[0];
      Var z = cells_[l]->forward_relaxed(t, rms_normalize(t, z_p),
                                         rms_normalize(t, z_pp), w);
      z_pp = z_p;
      z_p = z;
    }
    return z_p;
  }

  Var forward_discrete(Tape<T>& t, Var fusion_input, const ArchSpec& arch) {
    Var z_pp = seed0_.forward(t, fusion_input);
    Var z_p = seed1_.forward(t, fusion_input);
    for (auto& cell : cells_) {
      Var z = cell->forward_discrete(t, rms_normalize(t, z_p),
                                     rms_normalize(t, z_pp), arch);
      z_pp = z_p;
      z_p = z;
    }
    return z_p;
  }

  // architecture derived from the (first) alpha parameter
  ArchSpec derive() const {
    return derive_architecture(alpha_matrix(0), cells_[0]->topology().blocks,
                               kinds_);
  }

  std::vector<std::vector<double>> alpha_matrix(std::size_t which) const {
    const Parameter<T>& a = *alphas_.at(which);
    const int e = a.shape.h, k = a.shape.w;
    std::vector<std::vector<double>> m(
        std::size_t(e), std::vector<double>(std::size_t(k), 0.0));
    for (int i = 0; i < e; ++i)
      for (int j = 0; j < k; ++j)
        m[std::size_t(i)][std::size_t(j)] =
            double(a.value[std::size_t(i) * k + j]);
    return m;
  }

  std::vector<Parameter<T>*>& alpha_params() { return alphas_; }
  FusionCell<T>& cell(std::size_t l) { return *cells_.at(l); }
  std::size_t num_cells() const { return cells_.size(); }
  const std::vector<ops::OperatorKind>& kinds() const { return kinds_; }

 private:
  std::vector<ops::OperatorKind> kinds_;
  bool alpha_per_cell_;
  ops::Conv<T> seed0_, seed1_;
  std::vector<Parameter<T>*> alphas_;
  std::vector<std::unique_ptr<FusionCell<T>>> cells_;
};

// ---- derivation and serialization -------------------------------------------

inline ArchSpec derive_architecture(
    const std::vector<std::vector<double>>& alpha, int blocks,
    const std::vector<ops::OperatorKind>& kinds) {
  CellTopology topo(blocks);
  require(int(alpha.size()) == topo.edge_count(),
          "alpha row count does not match cell topology");
  ArchSpec arch;
  for (int i = 0; i < blocks; ++i) {
    struct Scored {
      int local;
      int op_index;
      double weight;
    };
    std::vector<Scored> scored;
    for (int j = 0; j < topo.num_inputs(i); ++j) {
      const auto& row = alpha[std::size_t(topo.edge_index(i, j))];
      require(row.size() == kinds.size(), "alpha row length mismatch");
      std::vector<double> soft = softmax(row);
      int best = -1;
      for (std::size_t k = 0; k < kinds.size(); ++k) {
        if (kinds[k] == ops::OperatorKind::zero) continue;
        if (best < 0 || soft[k] > soft[std::size_t(best)]) best = int(k);
      }
      require(best >= 0, "operator set contains only the zero op");
      scored.push_back({j, best, soft[std::size_t(best)]});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const Scored& a, const Scored& b) {
                       if (a.weight != b.weight) return a.weight > b.weight;
                       return a.local < b.local;
                     });
    Scored s1 = scored[0], s2 = scored.size() > 1 ? scored[1] : scored[0];
    if (s1.local > s2.local) std::swap(s1, s2);
    arch.push_back(BlockSpec{i, s1.local, kinds[std::size_t(s1.op_index)],
                             s2.local, kinds[std::size_t(s2.op_index)]});
  }
  return arch;
}

inline std::string arch_to_text(const ArchSpec& arch) {
  std::ostringstream os;
  os << "# fusion cell architecture; inputs: 0=prev_cell 1=prev_prev_cell "
        "2+k=block_k\n";
  os << "blocks " << arch.size() << "\n";
  for (const auto& b : arch)
    os << "block " << b.block << " in " << b.input1 << " op "
       << ops::kind_name(b.op1) << " in " << b.input2 << " op "
       << ops::kind_name(b.op2) << "\n";
  return os.str();
}

inline ArchSpec arch_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  ArchSpec arch;
  int expected = -1;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "blocks") {
      ls >> expected;
      continue;
    }
    require(tok == "block", "architecture parse error at: " + line);
    BlockSpec b;
    std::string kw, op1, op2;
    ls >> b.block >> kw >> b.input1 >> kw >> op1 >> kw >> b.input2 >> kw >> op2;
    require(!ls.fail(), "architecture parse error at: " + line);
    b.op1 = ops::kind_from_name(op1);
    b.op2 = ops::kind_from_name(op2);
    arch.push_back(b);
  }
  require(expected == int(arch.size()),
          "architecture block count mismatch in file");
  return arch;
}

}  // namespace fusenas::fusion
