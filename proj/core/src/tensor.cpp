#include "filter/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "filter/errors.hpp"

namespace filter {

struct Tensor::State {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;  // set when this tensor is an op output on a tape
  std::size_t node_id = 0;
};

namespace detail {
struct TensorAccess {
  using State = Tensor::State;

  static const std::shared_ptr<State>& state(const Tensor& t) { return t.st_; }

  static void ensure_grad(State& s) {
    if (s.grad.empty()) s.grad.assign(s.value.size(), 0.0);
  }

  static std::vector<std::function<void()>>& ops(Tape& t) { return t.ops_; }
  static bool& consumed(Tape& t) { return t.consumed_; }
};
}  // namespace detail

using detail::TensorAccess;
using StatePtr = std::shared_ptr<detail::TensorAccess::State>;

namespace {

thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a,
                             const Tensor& b) {
  throw ShapeError(op + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

// Records the backward closure when a tape is active and gradient flow is
// possible. The output inherits requires_grad transitively.
void record(const std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> backward_fn) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return;
  bool any = false;
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) {
      any = true;
      break;
    }
  }
  if (!any) return;
  auto& st = *TensorAccess::state(out);
  st.requires_grad = true;
  st.tape = tape;
  st.node_id = TensorAccess::ops(*tape).size();
  TensorAccess::ops(*tape).push_back(std::move(backward_fn));
}

// Shorthands used inside backward closures.
bool wants(const StatePtr& s) { return s->requires_grad; }
bool has_out_grad(const StatePtr& s) { return !s->grad.empty(); }
std::vector<double>& grad_of(const StatePtr& s) {
  TensorAccess::ensure_grad(*s);
  return s->grad;
}

}  // namespace

// --- Tensor basics ---------------------------------------------------------

Tensor::Tensor() : st_(std::make_shared<State>()) {}

Tensor::Tensor(int rows, int cols, bool requires_grad)
    : st_(std::make_shared<State>()) {
  if (rows <= 0 || cols <= 0)
    throw ShapeError("Tensor: dimensions must be positive, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  st_->rows = rows;
  st_->cols = cols;
  st_->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  st_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  return Tensor(rows, cols, requires_grad);
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
  Tensor t(rows, cols, requires_grad);
  for (double& v : t.st_->value) v = value;
  return t;
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<double>> rows,
    bool requires_grad) {
  int r = static_cast<int>(rows.size());
  int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Tensor t(r, c, requires_grad);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      throw ShapeError("from_rows: ragged initializer");
    int j = 0;
    for (double v : row) t.st_->value[static_cast<std::size_t>(i) * c + j++] = v;
    ++i;
  }
  return t;
}

Tensor Tensor::from_flat(int rows, int cols, std::vector<double> data,
                         bool requires_grad) {
  Tensor t(rows, cols, requires_grad);
  if (data.size() != t.st_->value.size())
    throw ShapeError("from_flat: data length " + std::to_string(data.size()) +
                     " does not match " + t.shape_str());
  t.st_->value = std::move(data);
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values, bool requires_grad) {
  Tensor t(1, static_cast<int>(values.size()), requires_grad);
  int j = 0;
  for (double v : values) t.st_->value[j++] = v;
  return t;
}

int Tensor::rows() const { return st_->rows; }
int Tensor::cols() const { return st_->cols; }
std::size_t Tensor::size() const { return st_->value.size(); }
bool Tensor::is_scalar() const { return st_->rows == 1 && st_->cols == 1; }

double Tensor::operator()(int r, int c) const {
  return st_->value[static_cast<std::size_t>(r) * st_->cols + c];
}

double& Tensor::at(int r, int c) {
  return st_->value[static_cast<std::size_t>(r) * st_->cols + c];
}

std::span<const double> Tensor::values() const { return st_->value; }
std::span<double> Tensor::values_mut() { return st_->value; }

bool Tensor::requires_grad() const { return st_->requires_grad; }
bool Tensor::has_grad() const { return !st_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (st_->grad.empty())
    throw ShapeError("grad: no gradient accumulated for this tensor");
  return st_->grad;
}

void Tensor::zero_grad() { st_->grad.clear(); }

double Tensor::item() const {
  if (!is_scalar())
    throw ShapeError("item: tensor is " + shape_str() + ", expected 1x1");
  return st_->value[0];
}

bool Tensor::same_storage(const Tensor& other) const {
  return st_ == other.st_;
}

std::string Tensor::shape_str() const {
  return std::to_string(st_->rows) + "x" + std::to_string(st_->cols);
}

// --- Tape ------------------------------------------------------------------

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  Tape* tape = g_active_tape;
  if (tape == nullptr)
    throw ShapeError("backward: no active tape on this thread");
  if (!loss.is_scalar())
    throw ShapeError("backward: loss must be 1x1, got " + loss.shape_str());
  const auto& st = TensorAccess::state(loss);
  if (st->tape != tape)
    throw ShapeError("backward: loss was not recorded on the active tape");
  if (TensorAccess::consumed(*tape))
    throw ShapeError("backward: tape already consumed; rebuild per forward");
  TensorAccess::consumed(*tape) = true;

  TensorAccess::ensure_grad(*st);
  st->grad[0] += 1.0;

  auto& ops = TensorAccess::ops(*tape);
  for (std::size_t i = ops.size(); i > 0; --i) ops[i - 1]();
}

// --- Ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  const int p = a.rows(), q = a.cols(), r = b.cols();
  Tensor out(p, r);
  {
    const double* av = TensorAccess::state(a)->value.data();
    const double* bv = TensorAccess::state(b)->value.data();
    double* cv = TensorAccess::state(out)->value.data();
    for (int i = 0; i < p; ++i) {
      double* crow = cv + static_cast<std::size_t>(i) * r;
      const double* arow = av + static_cast<std::size_t>(i) * q;
      for (int k = 0; k < q; ++k) {
        const double aik = arow[k];
        const double* brow = bv + static_cast<std::size_t>(k) * r;
        for (int j = 0; j < r; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  record({&a, &b}, out,
         [sa = TensorAccess::state(a), sb = TensorAccess::state(b),
          so = TensorAccess::state(out), p, q, r] {
           if (!has_out_grad(so)) return;
           const double* g = so->grad.data();
           if (wants(sa)) {
             // dA[i,k] += sum_j dC[i,j] * B[k,j]
             double* da = grad_of(sa).data();
             const double* bv = sb->value.data();
             for (int i = 0; i < p; ++i) {
               const double* grow = g + static_cast<std::size_t>(i) * r;
               for (int k = 0; k < q; ++k) {
                 const double* brow = bv + static_cast<std::size_t>(k) * r;
                 double s = 0.0;
                 for (int j = 0; j < r; ++j) s += grow[j] * brow[j];
                 da[static_cast<std::size_t>(i) * q + k] += s;
               }
             }
           }
           if (wants(sb)) {
             // dB[k,j] += sum_i A[i,k] * dC[i,j]
             double* db = grad_of(sb).data();
             const double* av = sa->value.data();
             for (int i = 0; i < p; ++i) {
               const double* grow = g + static_cast<std::size_t>(i) * r;
               const double* arow = av + static_cast<std::size_t>(i) * q;
               for (int k = 0; k < q; ++k) {
                 const double aik = arow[k];
                 double* dbrow = db + static_cast<std::size_t>(k) * r;
                 for (int j = 0; j < r; ++j) dbrow[j] += aik * grow[j];
               }
             }
           }
         });
  return out;
}

Tensor transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out(c, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a(i, j);
  record({&a}, out,
         [sa = TensorAccess::state(a), so = TensorAccess::state(out), r, c] {
           if (!has_out_grad(so) || !wants(sa)) return;
           double* da = grad_of(sa).data();
           const double* g = so->grad.data();
           for (int i = 0; i < r; ++i)
             for (int j = 0; j < c; ++j)
               da[static_cast<std::size_t>(i) * c + j] +=
                   g[static_cast<std::size_t>(j) * r + i];
         });
  return out;
}

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinKind kind,
                          const char* name) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(name, a, b);
  Tensor out(a.rows(), a.cols());
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values_mut();
  switch (kind) {
    case BinKind::Add:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
      break;
    case BinKind::Sub:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
      break;
    case BinKind::Mul:
      for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
      break;
  }
  record({&a, &b}, out,
         [sa = TensorAccess::state(a), sb = TensorAccess::state(b),
          so = TensorAccess::state(out), kind] {
           if (!has_out_grad(so)) return;
           const double* g = so->grad.data();
           const std::size_t n = so->grad.size();
           switch (kind) {
             case BinKind::Add:
               if (wants(sa)) {
                 double* da = grad_of(sa).data();
                 for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
               }
               if (wants(sb)) {
                 double* db = grad_of(sb).data();
                 for (std::size_t i = 0; i < n; ++i) db[i] += g[i];
               }
               break;
             case BinKind::Sub:
               if (wants(sa)) {
                 double* da = grad_of(sa).data();
                 for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
               }
               if (wants(sb)) {
                 double* db = grad_of(sb).data();
                 for (std::size_t i = 0; i < n; ++i) db[i] -= g[i];
               }
               break;
             case BinKind::Mul:
               if (wants(sa)) {
                 double* da = grad_of(sa).data();
                 const double* bv = sb->value.data();
                 for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
               }
               if (wants(sb)) {
                 double* db = grad_of(sb).data();
                 const double* av = sa->value.data();
                 for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
               }
               break;
           }
         });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, BinKind::Add, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, BinKind::Sub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, BinKind::Mul, "mul");
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.rows(), a.cols());
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  record({&a}, out,
         [sa = TensorAccess::state(a), so = TensorAccess::state(out), c] {
           if (!has_out_grad(so) || !wants(sa)) return;
           double* da = grad_of(sa).data();
           const double* g = so->grad.data();
           for (std::size_t i = 0; i < so->grad.size(); ++i) da[i] += g[i] * c;
         });
  return out;
}

namespace {
constexpr double kGeluCoef = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Tensor gelu(const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  const auto av = a.values();
  auto ov = out.values_mut();
  // Save tanh(u) for backward instead of recomputing it.
  auto saved_t = std::make_shared<std::vector<double>>(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    const double u = kSqrt2OverPi * (x + kGeluCoef * x * x * x);
    const double t = std::tanh(u);
    (*saved_t)[i] = t;
    ov[i] = 0.5 * x * (1.0 + t);
  }
  record({&a}, out,
         [sa = TensorAccess::state(a), so = TensorAccess::state(out), saved_t] {
           if (!has_out_grad(so) || !wants(sa)) return;
           double* da = grad_of(sa).data();
           const double* g = so->grad.data();
           const double* xv = sa->value.data();
           for (std::size_t i = 0; i < so->grad.size(); ++i) {
             const double x = xv[i];
             const double t = (*saved_t)[i];
             const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * x * x);
             const double dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
             da[i] += g[i] * dydx;
           }
         });
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  Tensor out(r, c);
  const auto av = a.values();
  auto ov = out.values_mut();
  for (int i = 0; i < r; ++i) {
    const double* row = av.data() + static_cast<std::size_t>(i) * c;
    double m = row[0];
    for (int j = 0; j < c; ++j) {
      if (!std::isfinite(row[j]))
        throw NumericError("softmax_rows: non-finite input at row " +
                           std::to_string(i));
      if (row[j] > m) m = row[j];
    }
    double* orow = ov.data() + static_cast<std::size_t>(i) * c;
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      z += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= z;
  }
  record({&a}, out,
         [sa = TensorAccess::state(a), so = TensorAccess::state(out), r, c] {
           if (!has_out_grad(so) || !wants(sa)) return;
           double* da = grad_of(sa).data();
           const double* g = so->grad.data();
           const double* s = so->value.data();
           for (int i = 0; i < r; ++i) {
             const std::size_t off = static_cast<std::size_t>(i) * c;
             double dot = 0.0;
             for (int j = 0; j < c; ++j) dot += g[off + j] * s[off + j];
             for (int j = 0; j < c; ++j)
               da[off + j] += s[off + j] * (g[off + j] - dot);
           }
         });
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (gain.rows() != 1 || gain.cols() != a.cols()) shape_fail("layer_norm gain", a, gain);
  if (bias.rows() != 1 || bias.cols() != a.cols()) shape_fail("layer_norm bias", a, bias);
  if (eps <= 0.0) throw ShapeError("layer_norm: eps must be > 0");
  const int r = a.rows(), c = a.cols();
  Tensor out(r, c);
  // Saved per row: x_hat and 1/sigma, both needed by backward.
  auto xhat = std::make_shared<std::vector<double>>(a.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(r);
  const auto av = a.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto ov = out.values_mut();
  for (int i = 0; i < r; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += av[off + j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = av[off + j] - mean;
      var += d * d;
    }
    var /= c;  // population variance
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < c; ++j) {
      const double xh = (av[off + j] - mean) * is;
      (*xhat)[off + j] = xh;
      ov[off + j] = gv[j] * xh + bv[j];
    }
  }
  record({&a, &gain, &bias}, out,
         [sa = TensorAccess::state(a), sg = TensorAccess::state(gain),
          sb = TensorAccess::state(bias), so = TensorAccess::state(out), xhat,
          inv_sigma, r, c] {
           if (!has_out_grad(so)) return;
           const double* g = so->grad.data();
           if (wants(sg)) {
             double* dg = grad_of(sg).data();
             for (int i = 0; i < r; ++i) {
               const std::size_t off = static_cast<std::size_t>(i) * c;
               for (int j = 0; j < c; ++j)
                 dg[j] += g[off + j] * (*xhat)[off + j];
             }
           }
           if (wants(sb)) {
             double* db = grad_of(sb).data();
             for (int i = 0; i < r; ++i) {
               const std::size_t off = static_cast<std::size_t>(i) * c;
               for (int j = 0; j < c; ++j) db[j] += g[off + j];
             }
           }
           if (wants(sa)) {
             double* da = grad_of(sa).data();
             const double* gv = sg->value.data();
             for (int i = 0; i < r; ++i) {
               const std::size_t off = static_cast<std::size_t>(i) * c;
               // h = dy * gain; dx = (h - mean(h) - xhat*mean(h*xhat)) / sigma
               double mean_h = 0.0, mean_hx = 0.0;
               for (int j = 0; j < c; ++j) {
                 const double h = g[off + j] * gv[j];
                 mean_h += h;
                 mean_hx += h * (*xhat)[off + j];
               }
               mean_h /= c;
               mean_hx /= c;
               const double is = (*inv_sigma)[i];
               for (int j = 0; j < c; ++j) {
                 const double h = g[off + j] * gv[j];
                 da[off + j] +=
                     is * (h - mean_h - (*xhat)[off + j] * mean_hx);
               }
             }
           }
         });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) shape_fail("concat_cols", a, b);
  const int r = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out(r, ca + cb);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) out.at(i, j) = a(i, j);
    for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b(i, j);
  }
  record({&a, &b}, out,
         [sa = TensorAccess::state(a), sb = TensorAccess::state(b),
          so = TensorAccess::state(out), r, ca, cb] {
           if (!has_out_grad(so)) return;
           const double* g = so->grad.data();
           const int cc = ca + cb;
           if (wants(sa)) {
             double* da = grad_of(sa).data();
             for (int i = 0; i < r; ++i)
               for (int j = 0; j < ca; ++j)
                 da[static_cast<std::size_t>(i) * ca + j] +=
                     g[static_cast<std::size_t>(i) * cc + j];
           }
           if (wants(sb)) {
             double* db = grad_of(sb).data();
             for (int i = 0; i < r; ++i)
               for (int j = 0; j < cb; ++j)
                 db[static_cast<std::size_t>(i) * cb + j] +=
                     g[static_cast<std::size_t>(i) * cc + ca + j];
           }
         });
  return out;
}

std::pair<Tensor, Tensor> split_cols(const Tensor& x, int left_cols) {
  if (left_cols <= 0 || left_cols >= x.cols())
    throw ShapeError("split_cols: split point " + std::to_string(left_cols) +
                     " out of bounds for " + x.shape_str());
  const int r = x.rows(), ca = left_cols, cb = x.cols() - left_cols;
  Tensor a(r, ca), b(r, cb);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < ca; ++j) a.at(i, j) = x(i, j);
    for (int j = 0; j < cb; ++j) b.at(i, j) = x(i, ca + j);
  }
  auto bw = [sx = TensorAccess::state(x), sa = TensorAccess::state(a),
             sb = TensorAccess::state(b), r, ca, cb] {
    if (!wants(sx)) return;
    const int cc = ca + cb;
    if (has_out_grad(sa)) {
      double* dx = grad_of(sx).data();
      const double* g = sa->grad.data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < ca; ++j)
          dx[static_cast<std::size_t>(i) * cc + j] +=
              g[static_cast<std::size_t>(i) * ca + j];
    }
    if (has_out_grad(sb)) {
      double* dx = grad_of(sx).data();
      const double* g = sb->grad.data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cb; ++j)
          dx[static_cast<std::size_t>(i) * cc + ca + j] +=
              g[static_cast<std::size_t>(i) * cb + j];
    }
  };
  // One recorded node routes gradient from both halves.
  record({&x}, a, bw);
  if (a.requires_grad()) {
    auto& st = *TensorAccess::state(b);
    st.requires_grad = true;
    st.tape = TensorAccess::state(a)->tape;
    st.node_id = TensorAccess::state(a)->node_id;
  }
  return {a, b};
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_fail("concat_rows", a, b);
  const int c = a.cols(), ra = a.rows(), rb = b.rows();
  Tensor out(ra + rb, c);
  {
    auto ov = out.values_mut();
    const auto av = a.values();
    const auto bv = b.values();
    std::copy(av.begin(), av.end(), ov.begin());
    std::copy(bv.begin(), bv.end(), ov.begin() + av.size());
  }
  record({&a, &b}, out,
         [sa = TensorAccess::state(a), sb = TensorAccess::state(b),
          so = TensorAccess::state(out)] {
           if (!has_out_grad(so)) return;
           const double* g = so->grad.data();
           if (wants(sa)) {
             double* da = grad_of(sa).data();
             for (std::size_t i = 0; i < sa->value.size(); ++i) da[i] += g[i];
           }
           if (wants(sb)) {
             double* db = grad_of(sb).data();
             const std::size_t off = sa->value.size();
             for (std::size_t i = 0; i < sb->value.size(); ++i)
               db[i] += g[off + i];
           }
         });
  return out;
}

std::pair<Tensor, Tensor> split_rows(const Tensor& x, int top_rows) {
  if (top_rows <= 0 || top_rows >= x.rows())
    throw ShapeError("split_rows: split point " + std::to_string(top_rows) +
                     " out of bounds for " + x.shape_str());
  const int c = x.cols(), ra = top_rows, rb = x.rows() - top_rows;
  Tensor a(ra, c), b(rb, c);
  {
    const auto xv = x.values();
    auto avm = a.values_mut();
    auto bvm = b.values_mut();
    std::copy(xv.begin(), xv.begin() + avm.size(), avm.begin());
    std::copy(xv.begin() + avm.size(), xv.end(), bvm.begin());
  }
  auto bw = [sx = TensorAccess::state(x), sa = TensorAccess::state(a),
             sb = TensorAccess::state(b)] {
    if (!wants(sx)) return;
    if (has_out_grad(sa)) {
      double* dx = grad_of(sx).data();
      const double* g = sa->grad.data();
      for (std::size_t i = 0; i < sa->value.size(); ++i) dx[i] += g[i];
    }
    if (has_out_grad(sb)) {
      double* dx = grad_of(sx).data();
      const double* g = sb->grad.data();
      const std::size_t off = sa->value.size();
      for (std::size_t i = 0; i < sb->value.size(); ++i) dx[off + i] += g[i];
    }
  };
  record({&x}, a, bw);
  if (a.requires_grad()) {
    auto& st = *TensorAccess::state(b);
    st.requires_grad = true;
    st.tape = TensorAccess::state(a)->tape;
    st.node_id = TensorAccess::state(a)->node_id;
  }
  return {a, b};
}

Tensor gather_cols(const Tensor& table, const std::vector<int>& indices) {
  const int d = table.rows(), n = static_cast<int>(indices.size());
  if (n == 0) throw ShapeError("gather_cols: empty index list");
  for (int idx : indices)
    if (idx < 0 || idx >= table.cols())
      throw ShapeError("gather_cols: index " + std::to_string(idx) +
                       " out of range for " + table.shape_str());
  Tensor out(d, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = table(i, indices[j]);
  record({&table}, out,
         [st = TensorAccess::state(table), so = TensorAccess::state(out),
          indices, d, n] {
           if (!has_out_grad(so) || !wants(st)) return;
           double* dt = grad_of(st).data();
           const double* g = so->grad.data();
           const int tc = st->cols;
           for (int i = 0; i < d; ++i)
             for (int j = 0; j < n; ++j)
               dt[static_cast<std::size_t>(i) * tc + indices[j]] +=
                   g[static_cast<std::size_t>(i) * n + j];
         });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out(1, 1);
  double s = 0.0;
  for (double v : a.values()) s += v;
  out.at(0, 0) = s;
  record({&a}, out,
         [sa = TensorAccess::state(a), so = TensorAccess::state(out)] {
           if (!has_out_grad(so) || !wants(sa)) return;
           const double g = so->grad[0];
           double* da = grad_of(sa).data();
           for (std::size_t i = 0; i < sa->value.size(); ++i) da[i] += g;
         });
  return out;
}

namespace {

// log-sum-exp of a row with max subtraction; also writes softmax into sm.
double row_log_sum_exp(std::span<const double> row, std::vector<double>& sm) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double z = 0.0;
  sm.resize(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    sm[j] = std::exp(row[j] - m);
    z += sm[j];
  }
  for (double& v : sm) v /= z;
  return m + std::log(z);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int target_index) {
  if (logits.rows() != 1)
    throw ShapeError("cross_entropy: logits must be a 1xC row, got " +
                     logits.shape_str());
  const int c = logits.cols();
  if (target_index < 0 || target_index >= c)
    throw DataError("cross_entropy: label " + std::to_string(target_index) +
                    " out of range for " + std::to_string(c) + " candidates");
  auto sm = std::make_shared<std::vector<double>>();
  const double lse = row_log_sum_exp(logits.values(), *sm);
  Tensor out(1, 1);
  out.at(0, 0) = lse - logits(0, target_index);
  record({&logits}, out,
         [sl = TensorAccess::state(logits), so = TensorAccess::state(out), sm,
          target_index, c] {
           if (!has_out_grad(so) || !wants(sl)) return;
           const double g = so->grad[0];
           double* dl = grad_of(sl).data();
           for (int j = 0; j < c; ++j) {
             double v = (*sm)[j];
             if (j == target_index) v -= 1.0;
             dl[j] += g * v;
           }
         });
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<int>& targets) {
  const int r = logits.rows(), c = logits.cols();
  if (static_cast<int>(targets.size()) != r)
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) +
                     " targets for " + logits.shape_str() + " logits");
  for (int t : targets)
    if (t < 0 || t >= c)
      throw DataError("cross_entropy_rows: label " + std::to_string(t) +
                      " out of range for " + std::to_string(c) +
                      " candidates");
  auto sm = std::make_shared<std::vector<double>>(logits.size());
  const auto lv = logits.values();
  double total = 0.0;
  std::vector<double> row_sm;
  for (int i = 0; i < r; ++i) {
    const double lse =
        row_log_sum_exp(lv.subspan(static_cast<std::size_t>(i) * c, c), row_sm);
    std::copy(row_sm.begin(), row_sm.end(),
              sm->begin() + static_cast<std::size_t>(i) * c);
    total += lse - lv[static_cast<std::size_t>(i) * c + targets[i]];
  }
  Tensor out(1, 1);
  out.at(0, 0) = total / r;
  record({&logits}, out,
         [sl = TensorAccess::state(logits), so = TensorAccess::state(out), sm,
          targets, r, c] {
           if (!has_out_grad(so) || !wants(sl)) return;
           const double g = so->grad[0] / r;
           double* dl = grad_of(sl).data();
           for (int i = 0; i < r; ++i) {
             const std::size_t off = static_cast<std::size_t>(i) * c;
             for (int j = 0; j < c; ++j) {
               double v = (*sm)[off + j];
               if (j == targets[i]) v -= 1.0;
               dl[off + j] += g * v;
             }
           }
         });
  return out;
}

Tensor kl_divergence(const Tensor& p_fixed, const Tensor& q_logits) {
  if (p_fixed.rows() != 1 || q_logits.rows() != 1 ||
      p_fixed.cols() != q_logits.cols())
    shape_fail("kl_divergence", p_fixed, q_logits);
  if (p_fixed.requires_grad())
    throw ShapeError("kl_divergence: p_fixed must not require gradients");
  const int c = p_fixed.cols();
  double psum = 0.0;
  for (double v : p_fixed.values()) psum += v;
  if (std::abs(psum - 1.0) > 1e-6)
    throw DataError("kl_divergence: p_fixed sums to " + std::to_string(psum) +
                    ", expected 1 within 1e-6");
  auto sm = std::make_shared<std::vector<double>>();
  const double lse = row_log_sum_exp(q_logits.values(), *sm);
  double kl = 0.0;
  for (int j = 0; j < c; ++j) {
    const double p = p_fixed(0, j);
    if (p > 0.0) kl += p * (std::log(p) - (q_logits(0, j) - lse));
  }
  Tensor out(1, 1);
  out.at(0, 0) = kl;
  record({&q_logits}, out,
         [sp = TensorAccess::state(p_fixed), sq = TensorAccess::state(q_logits),
          so = TensorAccess::state(out), sm, c] {
           if (!has_out_grad(so) || !wants(sq)) return;
           const double g = so->grad[0];
           double* dq = grad_of(sq).data();
           for (int j = 0; j < c; ++j)
             dq[j] += g * ((*sm)[j] - sp->value[j]);
         });
  return out;
}

Tensor kl_divergence_rows(const Tensor& p_fixed, const Tensor& q_logits) {
  if (p_fixed.rows() != q_logits.rows() || p_fixed.cols() != q_logits.cols())
    shape_fail("kl_divergence_rows", p_fixed, q_logits);
  if (p_fixed.requires_grad())
    throw ShapeError("kl_divergence_rows: p_fixed must not require gradients");
  const int r = p_fixed.rows(), c = p_fixed.cols();
  const auto pv = p_fixed.values();
  const auto qv = q_logits.values();
  for (int i = 0; i < r; ++i) {
    double psum = 0.0;
    for (int j = 0; j < c; ++j) psum += pv[static_cast<std::size_t>(i) * c + j];
    if (std::abs(psum - 1.0) > 1e-6)
      throw DataError("kl_divergence_rows: row " + std::to_string(i) +
                      " of p_fixed sums to " + std::to_string(psum));
  }
  auto sm = std::make_shared<std::vector<double>>(q_logits.size());
  double total = 0.0;
  std::vector<double> row_sm;
  for (int i = 0; i < r; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * c;
    const double lse = row_log_sum_exp(qv.subspan(off, c), row_sm);
    std::copy(row_sm.begin(), row_sm.end(), sm->begin() + off);
    for (int j = 0; j < c; ++j) {
      const double p = pv[off + j];
      if (p > 0.0) total += p * (std::log(p) - (qv[off + j] - lse));
    }
  }
  Tensor out(1, 1);
  out.at(0, 0) = total / r;
  record({&q_logits}, out,
         [sp = TensorAccess::state(p_fixed), sq = TensorAccess::state(q_logits),
          so = TensorAccess::state(out), sm, r, c] {
           if (!has_out_grad(so) || !wants(sq)) return;
           const double g = so->grad[0] / r;
           double* dq = grad_of(sq).data();
           for (std::size_t i = 0; i < sq->value.size(); ++i)
             dq[i] += g * ((*sm)[i] - sp->value[i]);
         });
  return out;
}

}  // namespace filter
