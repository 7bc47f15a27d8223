#include "berttune/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "berttune/softpred.hpp"

namespace berttune::ad {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.rows << "x" << s.cols;
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
  if (values.size() != shape.size()) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values for shape " + to_string(shape));
  }
  data_->shape = shape;
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1, 1}, {value}, requires_grad);
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const Shape s{1, values.size()};
  return Tensor(s, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (shape() != Shape{1, 1}) {
    throw ShapeError("item: tensor of shape " + to_string(shape()) +
                     " is not a scalar");
  }
  return data_->values[0];
}

void Tensor::set_requires_grad(bool on) {
  data_->requires_grad = on;
  if (!on) data_->grad.clear();
}

std::span<double> Tensor::mutable_grad() {
  if (!data_->requires_grad) {
    throw std::logic_error("gradient requested for a tensor without requires_grad");
  }
  if (data_->grad.size() != data_->values.size()) {
    data_->grad.assign(data_->values.size(), 0.0);
  }
  return data_->grad;
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), data_->values, requires_grad);
}

// ---------------------------------------------------------------------------

Tensor Graph::record(std::string_view op, Tensor output,
                     std::vector<Tensor> inputs, BackwardFn backward) {
  if (!record_) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return output;
  output.set_requires_grad(true);
  nodes_.push_back(Node{std::string(op), output, std::move(inputs), std::move(backward)});
  return output;
}

void Graph::backward(const Tensor& loss) {
  if (loss.shape() != Shape{1, 1}) {
    throw ShapeError("backward: loss of shape " + to_string(loss.shape()) +
                     " is not a scalar");
  }
  if (!record_) throw std::logic_error("backward: graph was built without recording");
  if (consumed_) throw std::logic_error("backward: graph already consumed");
  consumed_ = true;
  if (!loss.requires_grad()) return;

  Tensor root = loss;
  root.mutable_grad()[0] += 1.0;

  // Node outputs are interior; everything else that requires grad is a leaf.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.grad().empty()) continue;  // not on a path to the loss
    it->backward(it->output, it->inputs);
  }
  for (auto& node : nodes_) {
    for (auto& in : node.inputs) {
      if (in.requires_grad()) in.mutable_grad();
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void require(bool ok, std::string_view op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), op,
          "operand shapes differ (" + to_string(a.shape()) + " vs " +
              to_string(b.shape()) + ")");
}

template <typename Fn>
Tensor unary(Graph& g, std::string_view op, const Tensor& a, Fn value,
             std::function<double(double x, double y)> derivative) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value(av[i]);
  return g.record(op, Tensor(a.shape(), std::move(out)), {a},
                  [derivative](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto x = in[0].values();
                    auto y = o.values();
                    auto go = o.grad();
                    auto gi = in[0].mutable_grad();
                    for (std::size_t i = 0; i < gi.size(); ++i) {
                      gi[i] += go[i] * derivative(x[i], y[i]);
                    }
                  });
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul",
          "inner dimensions differ (" + to_string(a.shape()) + " * " +
              to_string(b.shape()) + ")");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return g.record("matmul", Tensor({m, n}, std::move(out)), {a, b},
                  [m, k, n](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      auto bv = in[1].values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
                          ga[i * k + p] += s;
                        }
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      auto av = in[0].values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = av[i * k + p];
                          if (aip == 0.0) continue;
                          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
                        }
                    }
                  });
}

Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt",
          "row widths differ (" + to_string(a.shape()) + " * " +
              to_string(b.shape()) + "^T)");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = s;
    }
  return g.record("matmul_nt", Tensor({m, n}, std::move(out)), {a, b},
                  [m, k, n](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      auto bv = in[1].values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = go[i * n + j];
                          if (gij == 0.0) continue;
                          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
                        }
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      auto av = in[0].values();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = go[i * n + j];
                          if (gij == 0.0) continue;
                          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
                        }
                    }
                  });
}

Tensor transpose(Graph& g, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return g.record("transpose", Tensor({n, m}, std::move(out)), {a},
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
                  });
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.record("add", Tensor(a.shape(), std::move(out)), {a, b},
                  [](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    for (auto& t : in) {
                      if (!t.requires_grad()) continue;
                      auto gt = t.mutable_grad();
                      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += go[i];
                    }
                  });
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return g.record("sub", Tensor(a.shape(), std::move(out)), {a, b},
                  [](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
                    }
                  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record("mul", Tensor(a.shape(), std::move(out)), {a, b},
                  [](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    auto av = in[0].values();
                    auto bv = in[1].values();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
                    }
                  });
}

Tensor div(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return g.record("div", Tensor(a.shape(), std::move(out)), {a, b},
                  [](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    auto bv = in[1].values();
                    auto y = o.values();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / bv[i];
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i] * y[i] / bv[i];
                    }
                  });
}

Tensor add_row(Graph& g, const Tensor& a, const Tensor& bias) {
  require(bias.rows() == 1 && bias.cols() == a.cols(), "add_row",
          "bias of shape " + to_string(bias.shape()) + " for matrix " +
              to_string(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return g.record("add_row", Tensor(a.shape(), std::move(out)), {a, bias},
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    if (in[0].requires_grad()) {
                      auto ga = in[0].mutable_grad();
                      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
                    }
                    if (in[1].requires_grad()) {
                      auto gb = in[1].mutable_grad();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
                    }
                  });
}

Tensor scale(Graph& g, const Tensor& a, double factor) {
  return unary(
      g, "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor exp(Graph& g, const Tensor& a) {
  return unary(
      g, "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(Graph& g, const Tensor& a, double floor) {
  return unary(
      g, "log", a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Tensor gelu(Graph& g, const Tensor& a) {
  return unary(
      g, "gelu", a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
      },
      [](double x, double) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sum(Graph& g, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return g.record("sum", Tensor::scalar(s), {a},
                  [](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    const double go = o.grad()[0];
                    for (double& v : in[0].mutable_grad()) v += go;
                  });
}

Tensor mean(Graph& g, const Tensor& a) {
  require(a.size() > 0, "mean", "empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double n = static_cast<double>(a.size());
  return g.record("mean", Tensor::scalar(s / n), {a},
                  [n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    const double go = o.grad()[0] / n;
                    for (double& v : in[0].mutable_grad()) v += go;
                  });
}

Tensor max_rows(Graph& g, const Tensor& a) {
  require(a.cols() > 0, "max_rows", "matrix has no columns");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m);
  std::vector<std::size_t> arg(m);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (av[i * n + j] > av[i * n + best]) best = j;
    arg[i] = best;
    out[i] = av[i * n + best];
  }
  return g.record("max_rows", Tensor({m, 1}, std::move(out)), {a},
                  [arg = std::move(arg), n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < arg.size(); ++i) ga[i * n + arg[i]] += go[i];
                  });
}

Tensor max_cols(Graph& g, const Tensor& a) {
  require(a.rows() > 0, "max_cols", "matrix has no rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n);
  std::vector<std::size_t> arg(n);
  auto av = a.values();
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (av[i * n + j] > av[best * n + j]) best = i;
    arg[j] = best;
    out[j] = av[best * n + j];
  }
  return g.record("max_cols", Tensor({1, n}, std::move(out)), {a},
                  [arg = std::move(arg), n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t j = 0; j < n; ++j) ga[arg[j] * n + j] += go[j];
                  });
}

namespace {

// dz = y * (dy - <dy, y>) for each row of a softmax output y.
void softmax_backward_rows(std::span<const double> y, std::span<const double> dy,
                           std::span<double> dz, std::size_t m, std::size_t n,
                           double factor) {
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
    for (std::size_t j = 0; j < n; ++j)
      dz[i * n + j] += factor * y[i * n + j] * (dy[i * n + j] - dot);
  }
}

}  // namespace

Tensor softmax_rows(Graph& g, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    softpred::softmax_into(a.row_values(i), 1.0, std::span(out).subspan(i * n, n));
  }
  return g.record("softmax_rows", Tensor(a.shape(), std::move(out)), {a},
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    softmax_backward_rows(o.values(), o.grad(), in[0].mutable_grad(), m, n, 1.0);
                  });
}

Tensor log_softmax_rows(Graph& g, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(av[i * n + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] - lse;
  }
  return g.record("log_softmax_rows", Tensor(a.shape(), std::move(out)), {a},
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto y = o.values();
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      double s = 0.0;
                      for (std::size_t j = 0; j < n; ++j) s += go[i * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        ga[i * n + j] += go[i * n + j] - std::exp(y[i * n + j]) * s;
                    }
                  });
}

Tensor sparsemax_rows(Graph& g, const Tensor& logits) {
  const std::size_t m = logits.rows(), n = logits.cols();
  require(n > 0, "sparsemax_rows", "empty rows");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    softpred::sparsemax_into(logits.row_values(i), std::span(out).subspan(i * n, n));
  }
  return g.record("sparsemax_rows", Tensor(logits.shape(), std::move(out)), {logits},
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      softpred::sparsemax_backward_into(o.row_values(i),
                                                        o.grad().subspan(i * n, n),
                                                        ga.subspan(i * n, n));
                    }
                  });
}

Tensor gumbel_softmax_rows(Graph& g, const Tensor& probs, const Tensor& noise,
                           double tau) {
  require_same("gumbel_softmax_rows", probs, noise);
  if (!(tau > 0.0)) {
    throw std::invalid_argument("gumbel_softmax_rows: temperature must be positive");
  }
  const std::size_t m = probs.rows(), n = probs.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    softpred::gumbel_softmax_into(probs.row_values(i), noise.row_values(i), tau,
                                  std::span(out).subspan(i * n, n));
  }
  return g.record(
      "gumbel_softmax_rows", Tensor(probs.shape(), std::move(out)), {probs, noise},
      [m, n, tau](const Tensor& o, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        std::vector<double> dz(m * n, 0.0);
        softmax_backward_rows(o.values(), o.grad(), dz, m, n, 1.0 / tau);
        auto p = in[0].values();
        auto gp = in[0].mutable_grad();
        for (std::size_t i = 0; i < m * n; ++i) {
          if (p[i] > softpred::kProbabilityFloor) gp[i] += dz[i] / p[i];
        }
      });
}

Tensor l2_normalize_rows(Graph& g, const Tensor& a) {
  constexpr double kFloor = 1e-12;
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * av[i * n + j];
    norms[i] = std::sqrt(s);
    const double d = std::max(norms[i], kFloor);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] / d;
  }
  return g.record("l2_normalize_rows", Tensor(a.shape(), std::move(out)), {a},
                  [m, n, norms = std::move(norms)](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto y = o.values();
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < m; ++i) {
                      if (norms[i] <= kFloor) {
                        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[i * n + j] / kFloor;
                        continue;
                      }
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * go[i * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        ga[i * n + j] += (go[i * n + j] - y[i * n + j] * dot) / norms[i];
                    }
                  });
}

Tensor layer_norm_rows(Graph& g, const Tensor& a, const Tensor& gamma,
                       const Tensor& beta, double eps) {
  const std::size_t m = a.rows(), n = a.cols();
  require(gamma.shape() == Shape{1, n} && beta.shape() == Shape{1, n},
          "layer_norm_rows",
          "gain/bias shapes " + to_string(gamma.shape()) + ", " +
              to_string(beta.shape()) + " for width " + std::to_string(n));
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  auto av = a.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += av[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (av[i * n + j] - mu) * (av[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (av[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return g.record(
      "layer_norm_rows", Tensor(a.shape(), std::move(out)), {a, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor& o, std::span<Tensor> in) {
        auto go = o.grad();
        auto gv = in[1].values();
        if (in[0].requires_grad()) {
          auto ga = in[0].mutable_grad();
          const double nn = static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = go[i * n + j] * gv[j];
              s1 += d;
              s2 += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = go[i * n + j] * gv[j];
              ga[i * n + j] += inv_std[i] * (d - s1 / nn - xhat[i * n + j] * s2 / nn);
            }
          }
        }
        if (in[1].requires_grad()) {
          auto gg = in[1].mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += go[i * n + j] * xhat[i * n + j];
        }
        if (in[2].requires_grad()) {
          auto gb = in[2].mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
        }
      });
}

Tensor gather_rows(Graph& g, const Tensor& table, std::span<const std::int32_t> ids) {
  const std::size_t n = table.cols();
  std::vector<double> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < table.rows(),
            "gather_rows",
            "index " + std::to_string(ids[i]) + " outside table of " +
                std::to_string(table.rows()) + " rows");
    auto row = table.row_values(static_cast<std::size_t>(ids[i]));
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return g.record("gather_rows", Tensor({ids.size(), n}, std::move(out)), {table},
                  [n, idx = std::move(idx)](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto gt = in[0].mutable_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      const std::size_t r = static_cast<std::size_t>(idx[i]);
                      for (std::size_t j = 0; j < n; ++j) gt[r * n + j] += go[i * n + j];
                    }
                  });
}

Tensor pick(Graph& g, const Tensor& a, std::span<const std::int32_t> ids) {
  require(ids.size() == a.rows(), "pick",
          std::to_string(ids.size()) + " indices for " + std::to_string(a.rows()) + " rows");
  const std::size_t n = a.cols();
  std::vector<double> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < n, "pick",
            "index " + std::to_string(ids[i]) + " outside row of width " + std::to_string(n));
    out[i] = a.at(i, static_cast<std::size_t>(ids[i]));
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return g.record("pick", Tensor({ids.size(), 1}, std::move(out)), {a},
                  [n, idx = std::move(idx)](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i)
                      ga[i * n + static_cast<std::size_t>(idx[i])] += go[i];
                  });
}

Tensor slice_rows(Graph& g, const Tensor& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.rows(), "slice_rows",
          "rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside " + to_string(a.shape()));
  const std::size_t n = a.cols();
  auto av = a.values();
  std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          av.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return g.record("slice_rows", Tensor({count, n}, std::move(out)), {a},
                  [begin, n](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < go.size(); ++i) ga[begin * n + i] += go[i];
                  });
}

Tensor slice_cols(Graph& g, const Tensor& a, std::size_t begin, std::size_t count) {
  require(begin + count <= a.cols(), "slice_cols",
          "columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside " + to_string(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * count);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * n + begin + j];
  return g.record("slice_cols", Tensor({m, count}, std::move(out)), {a},
                  [m, n, begin, count](const Tensor& o, std::span<Tensor> in) {
                    if (!in[0].requires_grad()) return;
                    auto go = o.grad();
                    auto ga = in[0].mutable_grad();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < count; ++j)
                        ga[i * n + begin + j] += go[i * count + j];
                  });
}

Tensor concat_rows(Graph& g, std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows", "no operands");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows",
            "operand widths differ (" + std::to_string(p.cols()) + " vs " + std::to_string(n) + ")");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return g.record("concat_rows", Tensor({m, n}, std::move(out)),
                  std::vector<Tensor>(parts.begin(), parts.end()),
                  [](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    std::size_t offset = 0;
                    for (auto& t : in) {
                      if (t.requires_grad()) {
                        auto gt = t.mutable_grad();
                        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += go[offset + i];
                      }
                      offset += t.size();
                    }
                  });
}

Tensor concat_cols(Graph& g, std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols", "no operands");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols",
            "operand heights differ (" + std::to_string(p.rows()) + " vs " + std::to_string(m) + ")");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out[i * n + offset + j] = p.at(i, j);
    offset += p.cols();
  }
  return g.record("concat_cols", Tensor({m, n}, std::move(out)),
                  std::vector<Tensor>(parts.begin(), parts.end()),
                  [m, n](const Tensor& o, std::span<Tensor> in) {
                    auto go = o.grad();
                    std::size_t offset = 0;
                    for (auto& t : in) {
                      const std::size_t w = t.cols();
                      if (t.requires_grad()) {
                        auto gt = t.mutable_grad();
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < w; ++j) gt[i * w + j] += go[i * n + offset + j];
                      }
                      offset += w;
                    }
                  });
}

}  // namespace berttune::ad
