#include "dmvae/kernels.hpp"

#include <algorithm>
#include <vector>

#include <omp.h>

namespace dmvae::kernels {
namespace {

constexpr std::size_t kColBlock = 512;

// Register tile of the matmul micro-kernel and the depth of one k panel.
constexpr std::size_t kTileRows = 8;
constexpr std::size_t kTileCols = 16;
constexpr std::size_t kDepth = 256;
constexpr std::size_t kPanelCols = 128;

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

// c[i, j] += sum_{p < depth} A(i, p) * b[p, j] over an rows x cols tile,
// where A(i, p) = a[i * a_row + p * a_depth]. Each c element accumulates in
// ascending p. Depth steps where the tile's A column is all zero are skipped
// (sparse images and ReLU activations).
// Eight doubles; the compiler maps it to one AVX-512 register or a pair of
// AVX2 registers.
typedef double Lane __attribute__((vector_size(64)));
constexpr std::size_t kLane = 8;

// Unaligned view of eight doubles in an array.
typedef double LaneView __attribute__((vector_size(64), aligned(8), may_alias));

inline Lane load_lane(const double* p) { return *reinterpret_cast<const LaneView*>(p); }

inline void store_lane(double* p, Lane v) { *reinterpret_cast<LaneView*>(p) = v; }

// c[i, j] += sum_p pa[p * R + i] * b[p, j] over an R x C tile, where `pa`
// is a packed A panel. Each c element accumulates in ascending p. Depth steps
// whose packed column is all zero (sparse images, ReLU activations) are
// listed out of `steps` beforehand.
template <std::size_t R, std::size_t C>
inline void tile_fixed(const double* pa, const std::size_t* steps, std::size_t n_steps, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t L = C / kLane;
  Lane acc[R][L];
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t l = 0; l < L; ++l) acc[i][l] = load_lane(c + i * ldc + l * kLane);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const std::size_t p = steps[s];
    const double* ap = pa + p * R;
    Lane bv[L];
    for (std::size_t l = 0; l < L; ++l) bv[l] = load_lane(b + p * ldb + l * kLane);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t l = 0; l < L; ++l) acc[i][l] += ap[i] * bv[l];
  }
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t l = 0; l < L; ++l) store_lane(c + i * ldc + l * kLane, acc[i][l]);
}

inline void tile_edge(const double* pa, std::size_t pr, const std::size_t* steps, std::size_t n_steps,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t s = 0; s < n_steps; ++s) {
    const std::size_t p = steps[s];
    const double* brow = b + p * ldb;
    for (std::size_t i = 0; i < rows; ++i) {
      const double aip = pa[p * pr + i];
      double* crow = c + i * ldc;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m, n] = A B with A(i, p) = a[i * a_row + p * a_depth] and
// B(p, j) = b[p * b_depth + j * b_col], p < k.
// Column blocks outermost; each [kDepth, kPanelCols] panel of b is packed
// into contiguous column tiles once and then swept by every row tile.
void blocked_product(const double* a, std::size_t a_row, std::size_t a_depth, const double* b,
                     std::size_t b_depth, std::size_t b_col, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  const auto row_tiles = static_cast<std::ptrdiff_t>((m + kTileRows - 1) / kTileRows);
  std::vector<double> panel(kDepth * kPanelCols);
#pragma omp parallel if (m * k * n > kParallelWork)
  {
    alignas(64) double packed[kDepth * kTileRows];
    std::size_t steps[kDepth];
    for (std::size_t jb = 0; jb < n; jb += kPanelCols) {
      const std::size_t jb_end = std::min(n, jb + kPanelCols);
      for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
        const std::size_t depth = std::min(kDepth, k - p0);
        // Column tile j0 of the panel is stored as [p][cols] at offset (j0 - jb) * depth.
#pragma omp for schedule(static)
        for (std::ptrdiff_t pp = 0; pp < static_cast<std::ptrdiff_t>(depth); ++pp) {
          const auto p = static_cast<std::size_t>(pp);
          const double* brow = b + (p0 + p) * b_depth;
          for (std::size_t j0 = jb; j0 < jb_end; j0 += kTileCols) {
            const std::size_t cols = std::min(kTileCols, jb_end - j0);
            double* dst = panel.data() + (j0 - jb) * depth + p * cols;
            for (std::size_t j = 0; j < cols; ++j) dst[j] = brow[(j0 + j) * b_col];
          }
        }
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < row_tiles; ++t) {
          const std::size_t i0 = static_cast<std::size_t>(t) * kTileRows;
          const std::size_t rows = std::min(kTileRows, m - i0);
          // Pack the A tile as [p][row] and list the depth steps with any nonzero.
          std::size_t n_steps = 0;
          for (std::size_t p = 0; p < depth; ++p) {
            bool any = false;
            for (std::size_t i = 0; i < rows; ++i) {
              const double v = a[(i0 + i) * a_row + (p0 + p) * a_depth];
              packed[p * rows + i] = v;
              any = any || v != 0.0;
            }
            if (any) steps[n_steps++] = p;
          }
          for (std::size_t j0 = jb; j0 < jb_end; j0 += kTileCols) {
            const std::size_t cols = std::min(kTileCols, jb_end - j0);
            const double* bt = panel.data() + (j0 - jb) * depth;
            double* cp = c + i0 * n + j0;
            if (rows == kTileRows && cols == kTileCols)
              tile_fixed<kTileRows, kTileCols>(packed, steps, n_steps, bt, cols, cp, n);
            else if (rows == kTileRows && cols == kTileCols / 2)
              tile_fixed<kTileRows, kTileCols / 2>(packed, steps, n_steps, bt, cols, cp, n);
            else if (rows == kTileRows / 2 && cols == kTileCols)
              tile_fixed<kTileRows / 2, kTileCols>(packed, steps, n_steps, bt, cols, cp, n);
            else
              tile_edge(packed, rows, steps, n_steps, bt, cols, cp, n, rows, cols);
          }
        }
      }
    }
  }
}

}  // namespace

int thread_count() { return omp_get_max_threads(); }

void set_thread_count(int n) { omp_set_num_threads(std::max(1, n)); }

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  blocked_product(a.data(), k, 1, b.data(), n, 1, c.data(), m, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  blocked_product(a.data(), 1, k, g.data(), n, 1, c.data(), k, m, n);
}

void matmul_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k) {
  blocked_product(g.data(), n, 1, b.data(), 1, n, c.data(), m, n, k);
}

void transpose(std::span<const double> in, std::span<double> out, std::size_t rows,
               std::size_t cols) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile)
    for (std::size_t j0 = 0; j0 < cols; j0 += tile)
      for (std::size_t i = i0; i < std::min(rows, i0 + tile); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + tile); ++j)
          out[j * rows + i] = in[i * cols + j];
}

void add_rowwise(std::span<double> x, std::span<const double> row, std::size_t rows,
                 std::size_t cols) {
  double* px = x.data();
  const double* pr = row.data();
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
    double* xr = px + static_cast<std::size_t>(i) * cols;
    for (std::size_t j = 0; j < cols; ++j) xr[j] += pr[j];
  }
}

void sum_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
              std::size_t cols) {
  std::fill(out.begin(), out.end(), 0.0);
  const auto col_blocks = static_cast<std::ptrdiff_t>((cols + kColBlock - 1) / kColBlock);
  const double* px = x.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < col_blocks; ++blk) {
    const std::size_t j0 = static_cast<std::size_t>(blk) * kColBlock;
    const std::size_t j1 = std::min(cols, j0 + kColBlock);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = j0; j < j1; ++j) po[j] += px[i * cols + j];
  }
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + r] * g[i * n + j];
      c[r * n + j] = acc;
    }
}

void matmul_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < k; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[r * n + j];
      c[i * k + r] = acc;
    }
}

void add_rowwise(std::span<double> x, std::span<const double> row, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) x[i * cols + j] += row[j];
}

void sum_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
              std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += x[i * cols + j];
    out[j] = acc;
  }
}

}  // namespace serial
}  // namespace dmvae::kernels
