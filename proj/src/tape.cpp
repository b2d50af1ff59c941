#include "nvs/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "nvs/threading.hpp"

namespace nvs {

namespace {

constexpr std::size_t kSerialGrain = 32768;  // below this, run inline

void run_rows(std::size_t rows, std::size_t work,
              const std::function<void(std::size_t, std::size_t)>& fn) {
  if (work < kSerialGrain) {
    fn(0, rows);
    return;
  }
  parallel_for(rows, fn);
}

// C[M,N] (+)= A[M,K] * B[K,N]. Four C rows share each loaded B row.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  run_rows(m, m * k * n, [&](std::size_t r0, std::size_t r1) {
    if (!accumulate)
      std::fill(c + r0 * n, c + r1 * n, S(0));
    std::size_t i = r0;
    for (; i + 4 <= r1; i += 4) {
      S* c0 = c + i * n;
      S* c1 = c0 + n;
      S* c2 = c1 + n;
      S* c3 = c2 + n;
      const S* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        S v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        const S* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          S bj = brow[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < r1; ++i) {
      S* crow = c + i * n;
      const S* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        S av = arow[p];
        const S* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  run_rows(m, m * k * n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const S* arow = a + i * k;
      S* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        const S* b0 = b + j * k;
        const S* b1 = b0 + k;
        const S* b2 = b1 + k;
        const S* b3 = b2 + k;
        S s0 = S(0), s1 = S(0), s2 = S(0), s3 = S(0);
        for (std::size_t p = 0; p < k; ++p) {
          S av = arow[p];
          s0 += av * b0[p];
          s1 += av * b1[p];
          s2 += av * b2[p];
          s3 += av * b3[p];
        }
        if (accumulate) {
          crow[j] += s0;
          crow[j + 1] += s1;
          crow[j + 2] += s2;
          crow[j + 3] += s3;
        } else {
          crow[j] = s0;
          crow[j + 1] = s1;
          crow[j + 2] = s2;
          crow[j + 3] = s3;
        }
      }
      for (; j < n; ++j) {
        const S* brow = b + j * k;
        S acc = S(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  });
}

// C[K,N] (+)= A[M,K]^T * B[M,N]. Four B rows share each loaded C row.
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  run_rows(k, m * k * n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t p = r0; p < r1; ++p) {
      S* crow = c + p * n;
      if (!accumulate) std::fill(crow, crow + n, S(0));
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        S v0 = a[i * k + p], v1 = a[(i + 1) * k + p];
        S v2 = a[(i + 2) * k + p], v3 = a[(i + 3) * k + p];
        const S* b0 = b + i * n;
        const S* b1 = b0 + n;
        const S* b2 = b1 + n;
        const S* b3 = b2 + n;
        for (std::size_t j = 0; j < n; ++j)
          crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
      }
      for (; i < m; ++i) {
        S av = a[i * k + p];
        const S* brow = b + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void elementwise(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n < kSerialGrain) {
    fn(0, n);
    return;
  }
  parallel_for(n, fn);
}

}  // namespace

template <typename S>
TapeVar Tape<S>::constant(Tensor<S> v) {
  Node n;
  n.owned = std::move(v);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
TapeVar Tape<S>::param(Tensor<S>& p) {
  if (!p.requires_grad)
    throw StateError("tape: param() requires a tensor with requires_grad set");
  Node n;
  n.external = &p;
  n.grad_sink = &p;
  n.needs = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
TapeVar Tape<S>::input(const Tensor<S>& t) {
  Node n;
  n.external = &t;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
TapeVar Tape<S>::reshape(Var a, Shape s) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (shape_size(s) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
  Tensor<S> y(std::move(s), x.data);
  return make(std::move(y), {a.id}, [pa = a.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    auto& dx = t.gbuf(pa);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

template <typename S>
TapeVar Tape<S>::slice_rows(Var a, std::size_t r0, std::size_t r1) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (x.shape.empty() || r0 > r1 || r1 > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") out of bounds for " + shape_str(x.shape));
  std::size_t c = x.cols();
  Shape s = x.shape;
  s[0] = r1 - r0;
  Tensor<S> y(s);
  std::copy(x.data.begin() + r0 * c, x.data.begin() + r1 * c, y.data.begin());
  return make(std::move(y), {a.id}, [pa = a.id, r0, c](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    auto& dx = t.gbuf(pa);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[r0 * c + i] += dy[i];
  });
}

template <typename S>
TapeVar Tape<S>::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (x.shape.empty() || c0 > c1 || c1 > x.cols())
    throw ShapeError("slice_cols: range out of bounds for " + shape_str(x.shape));
  std::size_t r = x.rows(), c = x.cols(), w = c1 - c0;
  Tensor<S> y({r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy(x.data.begin() + i * c + c0, x.data.begin() + i * c + c1, y.data.begin() + i * w);
  return make(std::move(y), {a.id}, [pa = a.id, c0, c, w](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    auto& dx = t.gbuf(pa);
    std::size_t r = dy.size() / w;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) dx[i * c + c0 + j] += dy[i * w + j];
  });
}

template <typename S>
TapeVar Tape<S>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::size_t rows = 0;
  Shape trail;
  for (Var p : parts) {
    check(p);
    const Tensor<S>& x = val(p.id);
    if (x.shape.empty()) throw ShapeError("concat_rows: rank-0 input");
    Shape t(x.shape.begin() + 1, x.shape.end());
    if (trail.empty() && rows == 0)
      trail = t;
    else if (t != trail)
      throw ShapeError("concat_rows: trailing shape mismatch");
    rows += x.rows();
  }
  Shape s;
  s.push_back(rows);
  s.insert(s.end(), trail.begin(), trail.end());
  Tensor<S> y(s);
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor<S>& x = val(p.id);
    std::copy(x.data.begin(), x.data.end(), y.data.begin() + off);
    off += x.size();
    ids.push_back(p.id);
    sizes.push_back(x.size());
  }
  return make(std::move(y), ids, [ids, sizes](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.nodes_[ids[k]].needs) {
        auto& dx = t.gbuf(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) dx[i] += dy[off + i];
      }
      off += sizes[k];
    }
  });
}

template <typename S>
TapeVar Tape<S>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t rows = val(parts[0].id).rows(), cols = 0;
  for (Var p : parts) {
    check(p);
    const Tensor<S>& x = val(p.id);
    if (x.shape.empty() || x.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += x.cols();
  }
  Tensor<S> y({rows, cols});
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor<S>& x = val(p.id);
    std::size_t w = x.cols();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(x.data.begin() + i * w, x.data.begin() + (i + 1) * w,
                y.data.begin() + i * cols + off);
    off += w;
    ids.push_back(p.id);
    widths.push_back(w);
  }
  return make(std::move(y), ids, [ids, widths, rows, cols](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      std::size_t w = widths[k];
      if (t.nodes_[ids[k]].needs) {
        auto& dx = t.gbuf(ids[k]);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j) dx[i * w + j] += dy[i * cols + off + j];
      }
      off += w;
    }
  });
}

template <typename S>
TapeVar Tape<S>::gather(Var a, std::vector<std::size_t> index, Shape out_shape) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (index.size() != shape_size(out_shape))
    throw ShapeError("gather: index count does not match output shape");
  for (std::size_t i : index)
    if (i >= x.size()) throw ShapeError("gather: index out of range");
  Tensor<S> y(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) y.data[i] = x.data[index[i]];
  return make(std::move(y), {a.id}, [pa = a.id, index = std::move(index)](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    auto& dx = t.gbuf(pa);
    for (std::size_t i = 0; i < index.size(); ++i) dx[index[i]] += dy[i];
  });
}

template <typename S>
TapeVar Tape<S>::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<S>&x = val(a.id), &y = val(b.id);
  if (x.shape != y.shape)
    throw ShapeError("add: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<S> z(x.shape);
  const S* xp = x.data.data();
  const S* yp = y.data.data();
  S* zp = z.data.data();
  elementwise(z.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) zp[i] = xp[i] + yp[i];
  });
  return make(std::move(z), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    if (t.nodes_[pa].needs) {
      auto& da = t.gbuf(pa);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (t.nodes_[pb].needs) {
      auto& db = t.gbuf(pb);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
}

template <typename S>
TapeVar Tape<S>::sub(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<S>&x = val(a.id), &y = val(b.id);
  if (x.shape != y.shape)
    throw ShapeError("sub: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = x.data[i] - y.data[i];
  return make(std::move(z), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    if (t.nodes_[pa].needs) {
      auto& da = t.gbuf(pa);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (t.nodes_[pb].needs) {
      auto& db = t.gbuf(pb);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
    }
  });
}

template <typename S>
TapeVar Tape<S>::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<S>&x = val(a.id), &y = val(b.id);
  if (x.shape != y.shape)
    throw ShapeError("mul: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = x.data[i] * y.data[i];
  return make(std::move(z), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    const auto& xa = t.val(pa).data;
    const auto& xb = t.val(pb).data;
    if (t.nodes_[pa].needs) {
      auto& da = t.gbuf(pa);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * xb[i];
    }
    if (t.nodes_[pb].needs) {
      auto& db = t.gbuf(pb);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * xa[i];
    }
  });
}

template <typename S>
TapeVar Tape<S>::scale(Var a, S c) {
  check(a);
  const Tensor<S>& x = val(a.id);
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = x.data[i] * c;
  return make(std::move(z), {a.id}, [pa = a.id, c](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    auto& da = t.gbuf(pa);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
  });
}

template <typename S>
TapeVar Tape<S>::scale_by(Var a, Var scalar) {
  check(a);
  check(scalar);
  const Tensor<S>& x = val(a.id);
  const Tensor<S>& s = val(scalar.id);
  if (s.size() != 1) throw ShapeError("scale_by: scalar operand must have one element");
  S sv = s.data[0];
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = x.data[i] * sv;
  return make(std::move(z), {a.id, scalar.id},
              [pa = a.id, ps = scalar.id, sv](Tape& t, int id) {
                auto& dy = t.nodes_[id].grad;
                const auto& xa = t.val(pa).data;
                if (t.nodes_[pa].needs) {
                  auto& da = t.gbuf(pa);
                  for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * sv;
                }
                if (t.nodes_[ps].needs) {
                  auto& ds = t.gbuf(ps);
                  S acc = S(0);
                  for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * xa[i];
                  ds[0] += acc;
                }
              });
}

template <typename S>
TapeVar Tape<S>::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<S>&x = val(a.id), &y = val(b.id);
  if (x.shape.empty() || y.shape.empty() || x.cols() != y.rows())
    throw ShapeError("matmul: " + shape_str(x.shape) + " x " + shape_str(y.shape));
  std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  Tensor<S> z({m, n});
  gemm_nn(x.data.data(), y.data.data(), z.data.data(), m, k, n, false);
  return make(std::move(z), {a.id, b.id}, [pa = a.id, pb = b.id, m, k, n](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    if (t.nodes_[pa].needs)
      gemm_nt(dy.data(), t.val(pb).data.data(), t.gbuf(pa).data(), m, n, k, true);
    if (t.nodes_[pb].needs)
      gemm_tn(t.val(pa).data.data(), dy.data(), t.gbuf(pb).data(), m, k, n, true);
  });
}

template <typename S>
TapeVar Tape<S>::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  const Tensor<S>&x = val(a.id), &y = val(b.id);
  if (x.shape.empty() || y.shape.empty() || x.cols() != y.cols())
    throw ShapeError("matmul_nt: " + shape_str(x.shape) + " x " + shape_str(y.shape) + "^T");
  std::size_t m = x.rows(), k = x.cols(), n = y.rows();
  Tensor<S> z({m, n});
  gemm_nt(x.data.data(), y.data.data(), z.data.data(), m, k, n, false);
  return make(std::move(z), {a.id, b.id}, [pa = a.id, pb = b.id, m, k, n](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    // z = a b^T: da = dz b, db = dz^T a
    if (t.nodes_[pa].needs)
      gemm_nn(dy.data(), t.val(pb).data.data(), t.gbuf(pa).data(), m, n, k, true);
    if (t.nodes_[pb].needs)
      gemm_tn(dy.data(), t.val(pa).data.data(), t.gbuf(pb).data(), m, n, k, true);
  });
}

template <typename S>
TapeVar Tape<S>::mean_all(Var a) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
  S acc = S(0);
  for (S v : x.data) acc += v;
  std::size_t n = x.size();
  Tensor<S> z({1});
  z.data[0] = acc / static_cast<S>(n);
  return make(std::move(z), {a.id}, [pa = a.id, n](Tape& t, int id) {
    S g = t.nodes_[id].grad[0] / static_cast<S>(n);
    auto& da = t.gbuf(pa);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

namespace {

// tanh through one exp; much faster than libm tanh for float
template <typename S>
inline S fast_tanh(S u) {
  return S(1) - S(2) / (std::exp(S(2) * u) + S(1));
}

}  // namespace

template <typename S>
TapeVar Tape<S>::gelu(Var a) {
  check(a);
  const Tensor<S>& x = val(a.id);
  Tensor<S> z(x.shape);
  const S k0 = S(0.7978845608028654);  // sqrt(2/pi)
  const S k1 = S(0.044715);
  const S* xp = x.data.data();
  S* zp = z.data.data();
  std::vector<S> tanh_saved(x.size());
  S* ts = tanh_saved.data();
  elementwise(z.size(), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      S v = xp[i];
      S th = fast_tanh(k0 * (v + k1 * v * v * v));
      ts[i] = th;
      zp[i] = S(0.5) * v * (S(1) + th);
    }
  });
  return make(std::move(z), {a.id},
              [pa = a.id, k0, k1, tanh_saved = std::move(tanh_saved)](Tape& t, int id) {
                auto& dy = t.nodes_[id].grad;
                const auto& xv = t.val(pa).data;
                auto& da = t.gbuf(pa);
                S* dap = da.data();
                const S* dyp = dy.data();
                const S* xp = xv.data();
                const S* ts = tanh_saved.data();
                elementwise(dy.size(), [&](std::size_t i0, std::size_t i1) {
                  for (std::size_t i = i0; i < i1; ++i) {
                    S v = xp[i];
                    S th = ts[i];
                    S du = k0 * (S(1) + S(3) * k1 * v * v);
                    dap[i] +=
                        dyp[i] * (S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th * th) * du);
                  }
                });
              });
}

template <typename S>
TapeVar Tape<S>::sigmoid(Var a) {
  check(a);
  const Tensor<S>& x = val(a.id);
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = S(1) / (S(1) + std::exp(-x.data[i]));
  return make(std::move(z), {a.id}, [pa = a.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    const auto& yv = t.val(id).data;
    auto& da = t.gbuf(pa);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * yv[i] * (S(1) - yv[i]);
  });
}

template <typename S>
TapeVar Tape<S>::abs(Var a) {
  check(a);
  const Tensor<S>& x = val(a.id);
  Tensor<S> z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] = std::fabs(x.data[i]);
  return make(std::move(z), {a.id}, [pa = a.id](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    const auto& xv = t.val(pa).data;
    auto& da = t.gbuf(pa);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      S s = xv[i] > S(0) ? S(1) : (xv[i] < S(0) ? S(-1) : S(0));
      da[i] += dy[i] * s;
    }
  });
}

template <typename S>
TapeVar Tape<S>::softmax_rows(Var a, const BoolMatrix* mask) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (x.shape.empty() || x.cols() == 0) throw ShapeError("softmax_rows: empty axis");
  std::size_t r = x.rows(), c = x.cols();
  if (mask && (mask->rows != r || mask->cols != c))
    throw ShapeError("softmax_rows: mask shape mismatch");
  if (mask) {
    for (std::size_t i = 0; i < r; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < c; ++j) any = any || mask->at(i, j);
      if (!any)
        throw MaskError("softmax_rows: row " + std::to_string(i) + " has no allowed entries");
    }
  }
  Tensor<S> z({r, c});
  const S* xp = x.data.data();
  S* zp = z.data.data();
  run_rows(r, r * c * 8, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const S* row = xp + i * c;
      S* out = zp + i * c;
      S mx = S(0);
      bool first = true;
      for (std::size_t j = 0; j < c; ++j) {
        if (mask && !mask->at(i, j)) continue;
        if (first || row[j] > mx) mx = row[j];
        first = false;
      }
      S denom = S(0);
      for (std::size_t j = 0; j < c; ++j) {
        if (mask && !mask->at(i, j)) {
          out[j] = S(0);
        } else {
          out[j] = std::exp(row[j] - mx);
          denom += out[j];
        }
      }
      for (std::size_t j = 0; j < c; ++j) out[j] /= denom;
    }
  });
  return make(std::move(z), {a.id}, [pa = a.id, r, c](Tape& t, int id) {
    auto& dy = t.nodes_[id].grad;
    const auto& yv = t.val(id).data;
    auto& da = t.gbuf(pa);
    const S* dyp = dy.data();
    const S* yp = yv.data();
    S* dap = da.data();
    run_rows(r, r * c * 4, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t i = i0; i < i1; ++i) {
        S dot = S(0);
        for (std::size_t j = 0; j < c; ++j) dot += dyp[i * c + j] * yp[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          dap[i * c + j] += yp[i * c + j] * (dyp[i * c + j] - dot);
      }
    });
  });
}

template <typename S>
TapeVar Tape<S>::layer_norm_rows(Var a, Var gain, S eps) {
  check(a);
  check(gain);
  const Tensor<S>& x = val(a.id);
  const Tensor<S>& g = val(gain.id);
  if (x.shape.empty()) throw ShapeError("layer_norm_rows: rank-0 input");
  std::size_t r = x.rows(), c = x.cols();
  if (g.size() != c) throw ShapeError("layer_norm_rows: gain size mismatch");
  Tensor<S> z({r, c});
  std::vector<S> xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const S* row = x.data.data() + i * c;
    S mu = S(0);
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<S>(c);
    S var = S(0);
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<S>(c);
    S inv = S(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv;
      z.data[i * c + j] = xhat[i * c + j] * g.data[j];
    }
  }
  z.shape = x.shape;
  return make(std::move(z), {a.id, gain.id},
              [pa = a.id, pg = gain.id, r, c, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Tape& t, int id) {
                auto& dy = t.nodes_[id].grad;
                const auto& g = t.val(pg).data;
                if (t.nodes_[pa].needs) {
                  auto& da = t.gbuf(pa);
                  for (std::size_t i = 0; i < r; ++i) {
                    S m1 = S(0), m2 = S(0);
                    for (std::size_t j = 0; j < c; ++j) {
                      S dyh = dy[i * c + j] * g[j];
                      m1 += dyh;
                      m2 += dyh * xhat[i * c + j];
                    }
                    m1 /= static_cast<S>(c);
                    m2 /= static_cast<S>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                      S dyh = dy[i * c + j] * g[j];
                      da[i * c + j] += inv_std[i] * (dyh - m1 - xhat[i * c + j] * m2);
                    }
                  }
                }
                if (t.nodes_[pg].needs) {
                  auto& dg = t.gbuf(pg);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      dg[j] += dy[i * c + j] * xhat[i * c + j];
                }
              });
}

template <typename S>
TapeVar Tape<S>::l2_normalize_rows(Var a) {
  check(a);
  const Tensor<S>& x = val(a.id);
  if (x.shape.empty()) throw ShapeError("l2_normalize_rows: rank-0 input");
  std::size_t r = x.rows(), c = x.cols();
  const S eps = S(1e-12);
  Tensor<S> z(x.shape);
  std::vector<S> inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    const S* row = x.data.data() + i * c;
    S sq = S(0);
    for (std::size_t j = 0; j < c; ++j) sq += row[j] * row[j];
    inv[i] = S(1) / std::sqrt(sq + eps);
    for (std::size_t j = 0; j < c; ++j) z.data[i * c + j] = row[j] * inv[i];
  }
  return make(std::move(z), {a.id},
              [pa = a.id, r, c, inv = std::move(inv)](Tape& t, int id) {
                auto& dy = t.nodes_[id].grad;
                const auto& xv = t.val(pa).data;
                auto& da = t.gbuf(pa);
                for (std::size_t i = 0; i < r; ++i) {
                  S dot = S(0);
                  for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * xv[i * c + j];
                  S i3 = inv[i] * inv[i] * inv[i];
                  for (std::size_t j = 0; j < c; ++j)
                    da[i * c + j] += dy[i * c + j] * inv[i] - xv[i * c + j] * i3 * dot;
                }
              });
}

template <typename S>
void Tape<S>::backward(Var root, S seed) {
  check(root);
  if (val(root.id).size() != 1)
    throw ShapeError("backward: root must be a scalar, got " + shape_str(val(root.id).shape));
  gbuf(root.id)[0] += seed;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.grad_sink && !n.grad.empty()) {
      n.grad_sink->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad_sink->grad[i] += n.grad[i];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

namespace {

// Repacks one head of an [L, heads, dh] tensor into a contiguous [L, dh]
// block, L2-normalizing rows when inv_out is given (saving 1/norm per row).
// transposed = true writes [dh, L] instead, which keeps the attention gemms
// wide along their streaming axis.
template <typename S>
void pack_head(const S* src, std::size_t l, std::size_t h, std::size_t dh, std::size_t head,
               S* dst, S* inv_out, bool transposed = false) {
  for (std::size_t r = 0; r < l; ++r) {
    const S* row = src + (r * h + head) * dh;
    S inv = S(1);
    if (inv_out) {
      S sq = S(0);
      for (std::size_t t = 0; t < dh; ++t) sq += row[t] * row[t];
      inv = S(1) / std::sqrt(sq + S(1e-12));
      inv_out[r] = inv;
    }
    if (transposed) {
      for (std::size_t t = 0; t < dh; ++t) dst[t * l + r] = row[t] * inv;
    } else {
      S* out = dst + r * dh;
      for (std::size_t t = 0; t < dh; ++t) out[t] = row[t] * inv;
    }
  }
}

}  // namespace

// Fused across the whole computation: per head, rows of q and k are
// L2-normalized, logits = gain * (q_hat . k_hat), masked entries become
// -inf, softmax rows weight v. One tape node; the backward pass walks the
// same per-head gemms in reverse.
template <typename S>
TapeVar qknorm_attention(Tape<S>& tape, TapeVar q, TapeVar k, TapeVar v,
                         const BoolMatrix* mask, TapeVar gains) {
  const Tensor<S>& qv = tape.value(q);
  const Tensor<S>& kv = tape.value(k);
  const Tensor<S>& vv = tape.value(v);
  const Tensor<S>& gv = tape.value(gains);
  if (qv.shape.size() != 3 || kv.shape.size() != 3 || vv.shape.size() != 3)
    throw ShapeError("qknorm_attention: q/k/v must have shape [L, heads, head_dim]");
  std::size_t lq = qv.shape[0], h = qv.shape[1], dh = qv.shape[2];
  std::size_t lk = kv.shape[0];
  if (kv.shape[1] != h || kv.shape[2] != dh || vv.shape != kv.shape)
    throw ShapeError("qknorm_attention: k/v shape mismatch");
  if (gv.size() != h) throw ShapeError("qknorm_attention: need one gain per head");
  if (mask && (mask->rows != lq || mask->cols != lk))
    throw ShapeError("qknorm_attention: mask must be [L_q, L_k]");
  if (mask) {
    for (std::size_t i = 0; i < lq; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < lk; ++j) any = any || mask->at(i, j);
      if (!any)
        throw MaskError("qknorm_attention: mask row " + std::to_string(i) +
                        " has no allowed keys");
    }
  }

  struct Saved {
    std::vector<S> qhat;           // h * lq * dh, rows
    std::vector<S> khat_t;         // h * dh * lk, transposed
    std::vector<S> vpack, vpack_t; // h * lk * dh rows and h * dh * lk transposed
    std::vector<S> inv_q, inv_k;   // h * l
    std::vector<S> logits, probs;  // h * lq * lk (logits are pre-gain)
  };
  auto saved = std::make_shared<Saved>();
  saved->qhat.resize(h * lq * dh);
  saved->khat_t.resize(h * dh * lk);
  saved->vpack.resize(h * lk * dh);
  saved->vpack_t.resize(h * dh * lk);
  saved->inv_q.resize(h * lq);
  saved->inv_k.resize(h * lk);
  saved->logits.resize(h * lq * lk);
  saved->probs.resize(h * lq * lk);

  Tensor<S> out({lq, h, dh});
  for (std::size_t head = 0; head < h; ++head) {
    S* qh = saved->qhat.data() + head * lq * dh;
    S* kh = saved->khat_t.data() + head * lk * dh;
    S* vp = saved->vpack.data() + head * lk * dh;
    S* vt = saved->vpack_t.data() + head * lk * dh;
    pack_head(qv.data.data(), lq, h, dh, head, qh, saved->inv_q.data() + head * lq);
    pack_head(kv.data.data(), lk, h, dh, head, kh, saved->inv_k.data() + head * lk, true);
    pack_head(vv.data.data(), lk, h, dh, head, vp, static_cast<S*>(nullptr));
    pack_head(vv.data.data(), lk, h, dh, head, vt, static_cast<S*>(nullptr), true);

    S* lg = saved->logits.data() + head * lq * lk;
    gemm_nn(qh, kh, lg, lq, dh, lk, false);

    S gain = gv.data[head];
    S* pr = saved->probs.data() + head * lq * lk;
    const BoolMatrix* m = mask;
    run_rows(lq, lq * lk * 8, [&](std::size_t r0, std::size_t r1) {
      for (std::size_t i = r0; i < r1; ++i) {
        const S* lrow = lg + i * lk;
        S* prow = pr + i * lk;
        S mx = S(0);
        bool first = true;
        for (std::size_t j = 0; j < lk; ++j) {
          if (m && !m->at(i, j)) continue;
          S val = gain * lrow[j];
          if (first || val > mx) mx = val;
          first = false;
        }
        S denom = S(0);
        for (std::size_t j = 0; j < lk; ++j) {
          if (m && !m->at(i, j)) {
            prow[j] = S(0);
          } else {
            prow[j] = std::exp(gain * lrow[j] - mx);
            denom += prow[j];
          }
        }
        for (std::size_t j = 0; j < lk; ++j) prow[j] /= denom;
      }
    });

    // out rows for this head; written strided into [lq, h, dh]
    std::vector<S> ohead(lq * dh);
    gemm_nn(pr, vp, ohead.data(), lq, lk, dh, false);
    for (std::size_t r = 0; r < lq; ++r)
      for (std::size_t t = 0; t < dh; ++t) out.data[(r * h + head) * dh + t] = ohead[r * dh + t];
  }

  return tape.make(
      std::move(out), {q.id, k.id, v.id, gains.id},
      [pq = q.id, pk = k.id, pv = v.id, pg = gains.id, saved, lq, lk, h, dh](Tape<S>& t, int id) {
        const auto& dy = t.nodes_[id].grad;
        const Tensor<S>& qv = t.val(pq);
        const Tensor<S>& kv = t.val(pk);
        const Tensor<S>& gv = t.val(pg);
        bool need_q = t.nodes_[pq].needs;
        bool need_k = t.nodes_[pk].needs;
        bool need_v = t.nodes_[pv].needs;
        bool need_g = t.nodes_[pg].needs;
        std::vector<S> dout(lq * dh), dprob(lq * lk), dv_head, dnorm(std::max(lq, lk) * dh);
        for (std::size_t head = 0; head < h; ++head) {
          const S* qh = saved->qhat.data() + head * lq * dh;
          const S* kh = saved->khat_t.data() + head * lk * dh;
          const S* vt = saved->vpack_t.data() + head * lk * dh;
          const S* lg = saved->logits.data() + head * lq * lk;
          const S* pr = saved->probs.data() + head * lq * lk;
          S gain = gv.data[head];

          for (std::size_t r = 0; r < lq; ++r)
            for (std::size_t t2 = 0; t2 < dh; ++t2)
              dout[r * dh + t2] = dy[(r * h + head) * dh + t2];

          if (need_v) {
            dv_head.assign(lk * dh, S(0));
            gemm_tn(pr, dout.data(), dv_head.data(), lq, lk, dh, true);
            auto& dv = t.gbuf(pv);
            for (std::size_t r = 0; r < lk; ++r)
              for (std::size_t t2 = 0; t2 < dh; ++t2)
                dv[(r * h + head) * dh + t2] += dv_head[r * dh + t2];
          }
          if (!need_q && !need_k && !need_g) continue;

          // d(probs[l,j]) = dOut[l] . V[j], via the transposed V pack
          gemm_nn(dout.data(), vt, dprob.data(), lq, dh, lk, false);
          // softmax backward in place (masked entries have prob 0)
          for (std::size_t i = 0; i < lq; ++i) {
            S dot = S(0);
            for (std::size_t j = 0; j < lk; ++j) dot += dprob[i * lk + j] * pr[i * lk + j];
            for (std::size_t j = 0; j < lk; ++j)
              dprob[i * lk + j] = pr[i * lk + j] * (dprob[i * lk + j] - dot);
          }
          if (need_g) {
            S acc = S(0);
            for (std::size_t i = 0; i < lq * lk; ++i) acc += dprob[i] * lg[i];
            t.gbuf(pg)[head] += acc;
          }
          if (!need_q && !need_k) continue;
          // d(pre-gain logit) = gain * d(scaled logit)
          for (std::size_t i = 0; i < lq * lk; ++i) dprob[i] *= gain;

          if (need_q) {
            // dqhat[l,t] = sum_j dP[l,j] * khat_t[t,j]
            gemm_nt(dprob.data(), kh, dnorm.data(), lq, lk, dh, false);
            auto& dq = t.gbuf(pq);
            const S* inv = saved->inv_q.data() + head * lq;
            for (std::size_t r = 0; r < lq; ++r) {
              const S* qrow = qv.data.data() + (r * h + head) * dh;
              const S* drow = dnorm.data() + r * dh;
              S dot = S(0);
              for (std::size_t t2 = 0; t2 < dh; ++t2) dot += qrow[t2] * drow[t2];
              S i3 = inv[r] * inv[r] * inv[r];
              for (std::size_t t2 = 0; t2 < dh; ++t2)
                dq[(r * h + head) * dh + t2] += drow[t2] * inv[r] - qrow[t2] * i3 * dot;
            }
          }
          if (need_k) {
            gemm_tn(dprob.data(), qh, dnorm.data(), lq, lk, dh, false);
            auto& dk = t.gbuf(pk);
            const S* inv = saved->inv_k.data() + head * lk;
            for (std::size_t r = 0; r < lk; ++r) {
              const S* krow = kv.data.data() + (r * h + head) * dh;
              const S* drow = dnorm.data() + r * dh;
              S dot = S(0);
              for (std::size_t t2 = 0; t2 < dh; ++t2) dot += krow[t2] * drow[t2];
              S i3 = inv[r] * inv[r] * inv[r];
              for (std::size_t t2 = 0; t2 < dh; ++t2)
                dk[(r * h + head) * dh + t2] += drow[t2] * inv[r] - krow[t2] * i3 * dot;
            }
          }
        }
      });
}

template TapeVar qknorm_attention<float>(Tape<float>&, TapeVar, TapeVar, TapeVar,
                                         const BoolMatrix*, TapeVar);
template TapeVar qknorm_attention<double>(Tape<double>&, TapeVar, TapeVar, TapeVar,
                                          const BoolMatrix*, TapeVar);

template <typename S>
double global_grad_norm(std::span<Tensor<S>* const> params) {
  double acc = 0.0;
  for (const Tensor<S>* p : params) {
    if (p->grad.size() != p->data.size())
      throw StateError("global_grad_norm: parameter has no populated gradient");
    for (S g : p->grad) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

template double global_grad_norm<float>(std::span<Tensor<float>* const>);
template double global_grad_norm<double>(std::span<Tensor<double>* const>);

}  // namespace nvs
