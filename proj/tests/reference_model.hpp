#pragma once

// Loop-based re-implementation of the forward pass on plain vectors. It reads
// weights from a ParameterStore but shares no code with the library model:
// graph bookkeeping (relation order, fact lists, role sets) is rebuilt here.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "dualkg/model.hpp"

namespace dualkg::reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec row(const Tensor& t, std::size_t r) {
  Vec out(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out[j] = t.at(r, j);
  return out;
}

inline Vec vec_of(const Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

// x [in] times W [in, out].
inline Vec vecmat(const Vec& x, const Tensor& w) {
  Vec out(w.cols(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w.at(i, j);
  return out;
}

inline Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec join(std::initializer_list<Vec> parts) {
  Vec out;
  for (const Vec& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline Vec softmax(const Vec& x) {
  const double m = *std::max_element(x.begin(), x.end());
  Vec out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += out[i] = std::exp(x[i] - m);
  for (double& v : out) v /= z;
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec mlp(const ParameterStore& p, const std::string& prefix, const Vec& x) {
  Vec h = plus(vecmat(x, p.get(prefix + ".W1")), vec_of(p.get(prefix + ".b1")));
  for (double& v : h) v = std::max(v, 0.0);
  const Tensor& w2 = p.get(prefix + ".W2");
  Vec out = w2.rank() == 1 ? Vec{dot(h, vec_of(w2))} : vecmat(h, w2);
  if (p.contains(prefix + ".b2")) out = plus(out, vec_of(p.get(prefix + ".b2")));
  return out;
}

// GRU over token embeddings; returns {h_1..h_l}.
inline Mat gru_states(const ParameterStore& p, const std::vector<std::uint32_t>& tokens) {
  const Tensor& emb = p.get("encoder.embedding");
  const std::size_t d = emb.cols();
  auto get = [&](const std::string& n) -> const Tensor& { return p.get("encoder.gru." + n); };
  Vec h(d, 0.0);
  Mat states;
  for (std::uint32_t tok : tokens) {
    const Vec x = row(emb, tok < emb.rows() ? tok : 0);
    const Vec xz = vecmat(x, get("W_z")), hz = vecmat(h, get("U_z"));
    const Vec xr = vecmat(x, get("W_r")), hr = vecmat(h, get("U_r"));
    Vec z(d), r(d), rh(d);
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = sigmoid(xz[j] + hz[j] + get("b_z")[j]);
      r[j] = sigmoid(xr[j] + hr[j] + get("b_r")[j]);
      rh[j] = r[j] * h[j];
    }
    const Vec xn = vecmat(x, get("W_n")), hn = vecmat(rh, get("U_n"));
    Vec next(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double n = std::tanh(xn[j] + hn[j] + get("b_n")[j]);
      next[j] = (1.0 - z[j]) * n + z[j] * h[j];
    }
    h = next;
    states.push_back(h);
  }
  return states;
}

struct Result {
  std::vector<Vec> distributions;  // p^(0..n)
  std::vector<Vec> word_attention;
  std::vector<Mat> dual_attention;
  std::vector<Mat> entities;
  std::vector<Mat> relations;
};

// sg must be the un-augmented subgraph.
inline Result forward(const ParameterStore& p, const ModelConfig& cfg, SubGraph sg,
                      const std::vector<std::uint32_t>& tokens) {
  const std::size_t base = sg.base_relation_count;
  if (cfg.inverse_facts) {
    const std::size_t n_orig = sg.facts.size();
    for (std::size_t f = 0; f < n_orig; ++f) {
      const Triple t = sg.facts[f];
      sg.facts.push_back({t.tail, static_cast<RelationId>(t.relation + base), t.head});
    }
  }
  const std::size_t N = sg.entities.size();
  const std::size_t d = cfg.hidden;

  std::vector<RelationId> rel_ids;
  for (const Triple& t : sg.facts) rel_ids.push_back(t.relation);
  std::sort(rel_ids.begin(), rel_ids.end());
  rel_ids.erase(std::unique(rel_ids.begin(), rel_ids.end()), rel_ids.end());
  const std::size_t R = rel_ids.size();
  auto node = [&](RelationId r) {
    return static_cast<std::size_t>(std::lower_bound(rel_ids.begin(), rel_ids.end(), r) - rel_ids.begin());
  };
  std::vector<std::set<std::size_t>> heads_of(N), tails_of(N), ents_of(R);
  for (const Triple& t : sg.facts) {
    heads_of[t.head].insert(node(t.relation));
    tails_of[t.tail].insert(node(t.relation));
    ents_of[node(t.relation)].insert(t.head);
    ents_of[node(t.relation)].insert(t.tail);
  }

  // Question encoding.
  const Mat hs = gru_states(p, tokens);
  const Vec q = hs.back();

  Mat rel(R);
  for (std::size_t i = 0; i < R; ++i) rel[i] = row(p.get("relation.embedding"), rel_ids[i]);
  Mat ent(N, Vec(d, 0.0));
  if (cfg.entity_init == EntityInit::kLookup) {
    for (std::size_t e = 0; e < N; ++e) {
      const Tensor& table = p.get("entity.embedding");
      ent[e] = row(table, sg.entities[e] < table.rows() ? sg.entities[e] : 0);
    }
  } else {
    for (std::size_t e = 0; e < N; ++e) {
      std::set<std::size_t> inc = heads_of[e];
      inc.insert(tails_of[e].begin(), tails_of[e].end());
      for (std::size_t r : inc) {
        const Vec proj = vecmat(rel[r], p.get("entity.init.W"));
        for (std::size_t j = 0; j < d; ++j) ent[e][j] += proj[j] / static_cast<double>(inc.size());
      }
    }
  }
  Vec dist(N, 0.0);
  for (std::size_t t : sg.topics) dist[t] = 1.0 / static_cast<double>(sg.topics.size());
  Vec instr = q;

  Result out;
  out.distributions.push_back(dist);
  out.entities.push_back(ent);
  out.relations.push_back(rel);

  for (std::size_t k = 1; k <= cfg.steps; ++k) {
    // Instruction.
    const std::string step = "instruction.step" + std::to_string(k);
    const Vec query = plus(vecmat(join({q, instr}), p.get(step + ".W")), vec_of(p.get(step + ".b")));
    const Vec w_alpha = vec_of(p.get("instruction.W_alpha"));
    Vec logits;
    for (const Vec& h : hs) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += h[j] * query[j] * w_alpha[j];
      logits.push_back(s);
    }
    const Vec alpha = softmax(logits);
    Vec i_k(d, 0.0);
    for (std::size_t t = 0; t < hs.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) i_k[j] += alpha[t] * hs[t][j];
    out.word_attention.push_back(alpha);

    // Primal step.
    Mat agg(N, Vec(d, 0.0));
    for (const Triple& t : sg.facts) {
      const Vec proj = vecmat(rel[node(t.relation)], p.get("primal.W_R"));
      for (std::size_t j = 0; j < d; ++j) agg[t.head][j] += dist[t.tail] * sigmoid(proj[j] * i_k[j]);
    }
    Mat primal(N);
    for (std::size_t e = 0; e < N; ++e) primal[e] = mlp(p, "primal.mlp", join({ent[e], agg[e]}));

    // Dual propagation.
    Mat rel_tilde = rel;
    Mat att(R, Vec(R, 0.0));
    if (cfg.dual_mode != DualMode::kOff) {
      auto adjacent = [&](std::size_t a, std::size_t b) {
        if (a == b) return true;
        for (std::size_t x : ents_of[a])
          if (ents_of[b].count(x)) return true;
        return false;
      };
      for (std::size_t a = 0; a < R; ++a) {
        if (cfg.dual_mode == DualMode::kAttention) {
          const Vec ra = vecmat(rel[a], p.get("dual.W_att"));
          double m = -1e300;
          for (std::size_t b = 0; b < R; ++b)
            if (adjacent(a, b)) m = std::max(m, dot(ra, rel[b]));
          double z = 0.0;
          for (std::size_t b = 0; b < R; ++b)
            if (adjacent(a, b)) z += att[a][b] = std::exp(dot(ra, rel[b]) - m);
          for (double& v : att[a]) v /= z;
        } else {
          double z = 0.0;
          for (std::size_t b = 0; b < R; ++b) {
            if (!adjacent(a, b)) continue;
            std::set<std::size_t> uni = ents_of[a];
            uni.insert(ents_of[b].begin(), ents_of[b].end());
            std::size_t inter = 0;
            for (std::size_t x : ents_of[a]) inter += ents_of[b].count(x);
            z += att[a][b] = static_cast<double>(inter) / static_cast<double>(uni.size());
          }
          for (double& v : att[a]) v /= z;
        }
        Vec hat(d, 0.0);
        for (std::size_t b = 0; b < R; ++b)
          for (std::size_t j = 0; j < d; ++j) hat[j] += att[a][b] * rel[b][j];
        rel_tilde[a] = plus(vecmat(join({hat, rel[a]}), p.get("dual.W_r")), vec_of(p.get("dual.b_r")));
        for (double& v : rel_tilde[a]) v = sigmoid(v);
      }
      out.dual_attention.push_back(att);
    }

    // Entity-aware relation update (uses the previous entity embeddings).
    Mat rel_next = rel_tilde;
    if (cfg.interaction) {
      Mat pooled(R, Vec(d, 0.0));
      std::vector<double> count(R, 0.0);
      for (const Triple& t : sg.facts) {
        const std::size_t r = node(t.relation);
        count[r] += 1.0;
        for (std::size_t j = 0; j < d; ++j) pooled[r][j] += ent[t.tail][j] - ent[t.head][j];
      }
      for (std::size_t r = 0; r < R; ++r) {
        for (double& v : pooled[r]) v /= count[r];
        rel_next[r] = plus(vecmat(join({pooled[r], rel_tilde[r]}), p.get("interaction.W_e")),
                           vec_of(p.get("interaction.b_e")));
        for (double& v : rel_next[r]) v = sigmoid(v);
      }
    }

    // Relation-aware entity update.
    Mat ent_next(N);
    for (std::size_t e = 0; e < N; ++e) {
      Vec proj(d, 0.0);
      for (std::size_t r : heads_of[e]) {
        const Vec v = vecmat(rel_next[r], p.get("interaction.W_head"));
        for (std::size_t j = 0; j < d; ++j) proj[j] += v[j] / static_cast<double>(heads_of[e].size());
      }
      for (std::size_t r : tails_of[e]) {
        const Vec v = vecmat(rel_next[r], p.get("interaction.W_tail"));
        for (std::size_t j = 0; j < d; ++j) proj[j] += v[j] / static_cast<double>(tails_of[e].size());
      }
      ent_next[e] = mlp(p, "entity_update.mlp", join({proj, primal[e]}));
      for (double& v : ent_next[e]) v = sigmoid(v);
    }

    // Decode.
    Vec scores;
    for (std::size_t e = 0; e < N; ++e) scores.push_back(mlp(p, "decoder.mlp", ent_next[e])[0]);
    dist = softmax(scores);

    // Instruction adaption.
    Vec topic_sum(d, 0.0);
    for (std::size_t t : sg.topics) topic_sum = plus(topic_sum, ent_next[t]);
    Vec diff(d), prod(d);
    for (std::size_t j = 0; j < d; ++j) {
      diff[j] = i_k[j] - topic_sum[j];
      prod[j] = i_k[j] * topic_sum[j];
    }
    const Vec cand = vecmat(join({i_k, topic_sum, diff, prod}), p.get("adapt.W_i"));
    const Vec gz = plus(plus(vecmat(cand, p.get("adapt.gate.W_z")), vecmat(i_k, p.get("adapt.gate.U_z"))),
                        vec_of(p.get("adapt.gate.b_z")));
    instr.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const double g = sigmoid(gz[j]);
      instr[j] = (1.0 - g) * i_k[j] + g * cand[j];
    }

    ent = ent_next;
    rel = rel_next;
    out.distributions.push_back(dist);
    out.entities.push_back(ent);
    out.relations.push_back(rel);
  }
  return out;
}

}  // namespace dualkg::reference
