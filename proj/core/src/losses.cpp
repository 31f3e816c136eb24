#include "freehand/losses.hpp"

#include "freehand/ops.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace freehand {

using ad::Tensor;

namespace {

Tensor to_tensor(const std::vector<PoseVector>& v) {
  std::vector<double> d;
  d.reserve(v.size() * 6);
  for (const auto& p : v)
    for (std::size_t k = 0; k < 6; ++k) d.push_back(p[k]);
  return Tensor::from({v.size(), 6}, std::move(d));
}

void check_lengths(const char* what, std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
  if (a == 0) throw std::invalid_argument(std::string(what) + ": empty sequence");
}

}  // namespace

void LossWeights::validate() const {
  if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0) throw std::invalid_argument("loss weights must be nonnegative");
  if (alpha1 + alpha2 + alpha3 <= 0) throw std::invalid_argument("at least one loss weight must be positive");
  if (!(epsilon >= 0)) throw std::invalid_argument("loss epsilon must be nonnegative");
}

Tensor mmae(const Tensor& truth, const Tensor& pred, double epsilon) {
  if (truth.shape() != pred.shape()) {
    throw std::invalid_argument("mmae: shapes " + ad::shape_str(truth.shape()) + " and " + ad::shape_str(pred.shape()));
  }
  if (truth.shape().back() != 6) throw std::invalid_argument("mmae: last axis must hold 6 components");
  std::vector<double> w(truth.numel());
  auto t = truth.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::abs(t[i]) + epsilon;
  Tensor weights = Tensor::from(truth.shape(), std::move(w));
  return ad::mean(ad::mul(weights, ad::abs(ad::sub(truth.detach(), pred))));
}

double mmae(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred, double epsilon) {
  check_lengths("mmae", truth.size(), pred.size());
  ad::NoGradGuard guard;
  return mmae(to_tensor(truth), to_tensor(pred), epsilon).item();
}

CorrelationLoss correlation_loss(const Tensor& truth, const Tensor& pred) {
  if (truth.shape() != pred.shape()) {
    throw std::invalid_argument("correlation_loss: shapes " + ad::shape_str(truth.shape()) + " and " +
                                ad::shape_str(pred.shape()));
  }
  Tensor t = truth.detach(), p = pred;
  if (t.dim() == 2) {
    t = ad::reshape(t, {1, t.size(0), t.size(1)});
    p = ad::reshape(p, {1, p.size(0), p.size(1)});
  }
  if (t.dim() != 3 || t.size(2) != 6) throw std::invalid_argument("correlation_loss: expected (B, L, 6)");
  if (t.size(1) < 2) throw std::invalid_argument("correlation_loss: needs at least 2 steps");
  Tensor tt = ad::permute(t, {0, 2, 1});
  Tensor pt = ad::permute(p, {0, 2, 1});
  Tensor cos = ad::cosine_similarity_rows(tt, pt);  // (B, 6)

  CorrelationLoss out;
  const std::size_t len = t.size(1);
  auto td = tt.data(), pd = pt.data();
  for (std::size_t r = 0; r < cos.numel(); ++r) {
    double nt = 0, np = 0;
    for (std::size_t k = 0; k < len; ++k) {
      nt += td[r * len + k] * td[r * len + k];
      np += pd[r * len + k] * pd[r * len + k];
    }
    if (nt == 0.0 || np == 0.0) ++out.zero_norm_series;
  }
  out.value = ad::mean(ad::add_scalar(ad::scale(cos, -1.0), 1.0));
  return out;
}

double correlation_loss(const std::vector<PoseVector>& truth, const std::vector<PoseVector>& pred) {
  check_lengths("correlation_loss", truth.size(), pred.size());
  ad::NoGradGuard guard;
  return correlation_loss(to_tensor(truth), to_tensor(pred)).value.item();
}

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative) {
  if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape()) {
    throw std::invalid_argument("triplet_loss: shapes " + ad::shape_str(anchor.shape()) + ", " +
                                ad::shape_str(positive.shape()) + ", " + ad::shape_str(negative.shape()));
  }
  Tensor gap = ad::sub(ad::l2_distance_rows(anchor, positive), ad::l2_distance_rows(anchor, negative));
  return ad::mean(ad::relu(gap));
}

std::vector<Triplet> select_triplets(const std::vector<PoseVector>& motions) {
  const std::size_t n = motions.size();
  if (n < 3) throw std::invalid_argument("select_triplets: needs at least 3 steps, got " + std::to_string(n));
  auto cosine = [](const PoseVector& a, const PoseVector& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      dot += a[k] * b[k];
      na += a[k] * a[k];
      nb += b[k] * b[k];
    }
    return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
  };
  std::vector<Triplet> out;
  out.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    double best = 0, worst = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double c = cosine(motions[a], motions[j]);
      if (pos == n || c > best) {
        best = c;
        pos = j;
      }
      if (neg == n || c < worst) {
        worst = c;
        neg = j;
      }
    }
    out.push_back({a, pos, neg});
  }
  return out;
}

Tensor total_loss(const LossComponents& parts, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  auto add = [&](const Tensor& t, double a) {
    if (a != 0.0 && t.defined()) total = ad::add(total, ad::scale(ad::reshape(t, {1}), a));
  };
  add(parts.mmae, w.alpha1);
  add(parts.corr, w.alpha2);
  add(parts.triplet, w.alpha3);
  return total;
}

void write_loss_row(std::ostream& os, const LossLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.10g,%.10g,%.10g,%.10g,%.10g\n", static_cast<unsigned long long>(r.step),
                r.mmae, r.corr, r.triplet, r.total, r.lr);
  os << buf;
}

}  // namespace freehand
