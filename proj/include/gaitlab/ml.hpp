#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitlab/rng.hpp"
#include "gaitlab/types.hpp"

namespace gaitlab::ml {

// Class encoding used throughout the learners.
inline constexpr int kLabelTD = 0;
inline constexpr int kLabelDMD = 1;

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

/// Row-major numeric matrix with labels and subject provenance. Labels may
/// be empty for prediction-only matrices; groups drive leakage-free splits.
struct DesignMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<double> data;
    std::vector<int> labels;
    std::vector<std::string> groups;
    std::vector<std::string> column_names;

    double& at(std::size_t i, std::size_t j) { return data[i * n_cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * n_cols + j]; }

    void add_row(const std::vector<double>& row, int label, const std::string& group) {
        if (n_rows == 0 && n_cols == 0) n_cols = row.size();
        if (row.size() != n_cols) throw ShapeError("row width does not match design matrix");
        data.insert(data.end(), row.begin(), row.end());
        labels.push_back(label);
        groups.push_back(group);
        ++n_rows;
    }

    void validate_for_training() const {
        if (n_rows < 2) throw DataError("training needs at least 2 rows");
        if (labels.size() != n_rows) throw ShapeError("labels missing for training matrix");
        for (const double v : data)
            if (!std::isfinite(v)) throw DataError("design matrix contains non-finite values");
        bool td = false, dmd = false;
        for (const int y : labels) (y == kLabelDMD ? dmd : td) = true;
        if (!td || !dmd) throw DataError("training set contains a single class");
    }

    std::vector<double> row(std::size_t i) const {
        return {data.begin() + static_cast<std::ptrdiff_t>(i * n_cols),
                data.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_cols)};
    }
};

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct Scaler {
    std::vector<double> mean;
    std::vector<double> scale; // 0 marks a zero-variance column: output 0
};

inline Scaler standardize_fit(const DesignMatrix& train) {
    if (train.n_rows == 0) throw DataError("cannot fit scaler on empty matrix");
    Scaler s;
    s.mean.assign(train.n_cols, 0.0);
    s.scale.assign(train.n_cols, 0.0);
    for (std::size_t i = 0; i < train.n_rows; ++i)
        for (std::size_t j = 0; j < train.n_cols; ++j) s.mean[j] += train.at(i, j);
    for (double& m : s.mean) m /= static_cast<double>(train.n_rows);
    for (std::size_t i = 0; i < train.n_rows; ++i)
        for (std::size_t j = 0; j < train.n_cols; ++j) {
            const double dlt = train.at(i, j) - s.mean[j];
            s.scale[j] += dlt * dlt;
        }
    for (double& v : s.scale) {
        v = std::sqrt(v / static_cast<double>(train.n_rows));
        if (!(v > 0.0)) v = 0.0;
    }
    return s;
}

inline DesignMatrix standardize_apply(const Scaler& s, const DesignMatrix& m) {
    if (m.n_cols != s.mean.size()) throw ShapeError("scaler width does not match matrix");
    DesignMatrix out = m;
    for (std::size_t i = 0; i < m.n_rows; ++i)
        for (std::size_t j = 0; j < m.n_cols; ++j)
            out.at(i, j) = s.scale[j] > 0.0 ? (m.at(i, j) - s.mean[j]) / s.scale[j] : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Dense symmetric eigen-decomposition (cyclic Jacobi) and linear solve
// ---------------------------------------------------------------------------

namespace detail {

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching unit eigenvectors as rows
/// of `vectors` (vectors[k*d + j] = component j of eigenvector k).
inline void jacobi_eigen(std::vector<double> a, std::size_t d, std::vector<double>& values,
                         std::vector<double>& vectors) {
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        double diag = 0.0;
        for (std::size_t p = 0; p < d; ++p) diag += a[p * d + p] * a[p * d + p];
        if (off <= 1e-24 * std::max(diag, 1e-300)) break;

        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (apq == 0.0) continue;
                const double app = a[p * d + p], aqq = a[q * d + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = v[k * d + p], vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x * d + x] > a[y * d + y]; });
    values.resize(d);
    vectors.assign(d * d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        values[k] = a[order[k] * d + order[k]];
        for (std::size_t j = 0; j < d; ++j) vectors[k * d + j] = v[j * d + order[k]];
    }
}

/// Solves A x = b for symmetric positive-definite-ish A via Gaussian
/// elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b,
                                        std::size_t d) {
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::fabs(a[r * d + col]) > std::fabs(a[pivot * d + col])) pivot = r;
        if (std::fabs(a[pivot * d + col]) < 1e-300)
            throw NumericError("scatter matrix is singular even after regularization");
        if (pivot != col) {
            for (std::size_t k = 0; k < d; ++k) std::swap(a[col * d + k], a[pivot * d + k]);
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < d; ++r) {
            const double f = a[r * d + col] / a[col * d + col];
            if (f == 0.0) continue;
            for (std::size_t k = col; k < d; ++k) a[r * d + k] -= f * a[col * d + k];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(d, 0.0);
    for (std::size_t i = d; i-- > 0;) {
        double acc = b[i];
        for (std::size_t k = i + 1; k < d; ++k) acc -= a[i * d + k] * x[k];
        x[i] = acc / (a[i * d + i]);
    }
    return x;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

struct Projection {
    enum class Kind { PCA2, LDA1 };
    Kind kind = Kind::PCA2;
    std::vector<double> mean;      // d
    std::vector<double> basis;     // k rows of d entries
    std::vector<double> explained; // PCA only: top-k eigenvalue shares
    std::size_t dim_in = 0;
    std::size_t dim_out = 0;
};

inline Projection pca_fit(const DesignMatrix& train) {
    if (train.n_rows < 3) throw DataError("PCA needs at least 3 rows");
    if (train.n_cols < 2) throw DataError("PCA needs at least 2 columns");
    const std::size_t d = train.n_cols;

    Projection p;
    p.kind = Projection::Kind::PCA2;
    p.dim_in = d;
    p.dim_out = 2;
    p.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < train.n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) p.mean[j] += train.at(i, j);
    for (double& m : p.mean) m /= static_cast<double>(train.n_rows);

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < train.n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double xj = train.at(i, j) - p.mean[j];
            for (std::size_t k = j; k < d; ++k)
                cov[j * d + k] += xj * (train.at(i, k) - p.mean[k]);
        }
    const double denom = static_cast<double>(train.n_rows - 1);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = j; k < d; ++k) {
            cov[j * d + k] /= denom;
            cov[k * d + j] = cov[j * d + k];
        }

    std::vector<double> values, vectors;
    detail::jacobi_eigen(std::move(cov), d, values, vectors);

    double total = 0.0;
    for (const double v : values) total += std::max(v, 0.0);
    p.basis.resize(2 * d);
    p.explained.resize(2);
    for (std::size_t c = 0; c < 2; ++c) {
        // Sign convention: the largest-magnitude component points positive.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::fabs(vectors[c * d + j]) > std::fabs(vectors[c * d + arg])) arg = j;
        const double sign = vectors[c * d + arg] < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) p.basis[c * d + j] = sign * vectors[c * d + j];
        p.explained[c] = total > 0.0 ? std::max(values[c], 0.0) / total : 0.0;
    }
    return p;
}

inline Projection lda_fit(const DesignMatrix& train) {
    train.validate_for_training();
    const std::size_t d = train.n_cols;

    std::array<std::vector<double>, 2> mu = {std::vector<double>(d, 0.0),
                                             std::vector<double>(d, 0.0)};
    std::array<std::size_t, 2> count{};
    for (std::size_t i = 0; i < train.n_rows; ++i) {
        const int y = train.labels[i];
        ++count[static_cast<std::size_t>(y)];
        for (std::size_t j = 0; j < d; ++j) mu[static_cast<std::size_t>(y)][j] += train.at(i, j);
    }
    for (int y = 0; y < 2; ++y)
        for (double& v : mu[static_cast<std::size_t>(y)])
            v /= static_cast<double>(count[static_cast<std::size_t>(y)]);

    std::vector<double> sw(d * d, 0.0);
    std::vector<double> centered(d);
    for (std::size_t i = 0; i < train.n_rows; ++i) {
        const auto y = static_cast<std::size_t>(train.labels[i]);
        for (std::size_t j = 0; j < d; ++j) centered[j] = train.at(i, j) - mu[y][j];
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k) sw[j * d + k] += centered[j] * centered[k];
    }
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += sw[j * d + j];
    const double ridge = 1e-6 * (trace > 0.0 ? trace / static_cast<double>(d) : 1.0);
    for (std::size_t j = 0; j < d; ++j) sw[j * d + j] += ridge;

    std::vector<double> diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = mu[1][j] - mu[0][j];
    std::vector<double> w = detail::solve_linear(std::move(sw), diff, d);

    double norm = 0.0;
    for (const double v : w) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw NumericError("LDA direction collapsed to zero");
    double orient = 0.0;
    for (std::size_t j = 0; j < d; ++j) orient += w[j] * (mu[1][j] - mu[0][j]);
    const double sign = orient < 0.0 ? -1.0 : 1.0;

    Projection p;
    p.kind = Projection::Kind::LDA1;
    p.dim_in = d;
    p.dim_out = 1;
    p.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < train.n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) p.mean[j] += train.at(i, j);
    for (double& m : p.mean) m /= static_cast<double>(train.n_rows);
    p.basis.resize(d);
    for (std::size_t j = 0; j < d; ++j) p.basis[j] = sign * w[j] / norm;
    return p;
}

inline DesignMatrix project(const Projection& p, const DesignMatrix& m) {
    if (m.n_cols != p.dim_in) throw ShapeError("projection width does not match matrix");
    DesignMatrix out;
    out.n_rows = m.n_rows;
    out.n_cols = p.dim_out;
    out.labels = m.labels;
    out.groups = m.groups;
    out.data.resize(m.n_rows * p.dim_out);
    for (std::size_t c = 0; c < p.dim_out; ++c)
        out.column_names.push_back(p.kind == Projection::Kind::PCA2
                                       ? "pc" + std::to_string(c + 1)
                                       : "ld" + std::to_string(c + 1));
    for (std::size_t i = 0; i < m.n_rows; ++i)
        for (std::size_t c = 0; c < p.dim_out; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < p.dim_in; ++j)
                acc += (m.at(i, j) - p.mean[j]) * p.basis[c * p.dim_in + j];
            out.data[i * p.dim_out + c] = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Classifiers
// ---------------------------------------------------------------------------

enum class ModelKind { RF, DT, SVM, kNN, GNB, LR };
enum class ProjectionKind { None, PCA2, LDA1 };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::RF: return "rf";
        case ModelKind::DT: return "dt";
        case ModelKind::SVM: return "svm";
        case ModelKind::kNN: return "knn";
        case ModelKind::GNB: return "gnb";
        case ModelKind::LR: return "lr";
    }
    throw ParameterError("invalid model kind");
}

inline std::optional<ModelKind> model_kind_from_string(const std::string& s) {
    for (const ModelKind k : {ModelKind::RF, ModelKind::DT, ModelKind::SVM, ModelKind::kNN,
                              ModelKind::GNB, ModelKind::LR})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

inline std::string to_string(ProjectionKind k) {
    switch (k) {
        case ProjectionKind::None: return "none";
        case ProjectionKind::PCA2: return "pca2";
        case ProjectionKind::LDA1: return "lda1";
    }
    throw ParameterError("invalid projection kind");
}

inline std::optional<ProjectionKind> projection_kind_from_string(const std::string& s) {
    for (const ProjectionKind k :
         {ProjectionKind::None, ProjectionKind::PCA2, ProjectionKind::LDA1})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

struct Hyper {
    int knn_k = 3;
    int rf_trees = 100;
    int min_split = 2;
    double svm_lambda = 1e-3;
    int svm_epochs = 200;
    double svm_lr0 = 0.1;
    double lr_lambda = 1e-4;
    int lr_max_iters = 5000;
    double lr_grad_tol = 1e-6;
    double gnb_var_floor = 1e-9;

    void validate() const {
        if (knn_k < 1) throw ParameterError("knn_k must be positive");
        if (rf_trees < 1) throw ParameterError("rf_trees must be positive");
        if (min_split < 2) throw ParameterError("min_split must be at least 2");
        if (svm_lambda < 0 || lr_lambda < 0) throw ParameterError("lambda must be nonnegative");
        if (svm_epochs < 1 || lr_max_iters < 1) throw ParameterError("iteration budget must be positive");
        if (!(gnb_var_floor > 0)) throw ParameterError("variance floor must be positive");
    }
};

/// One CART node; feature == -1 marks a leaf carrying p(DMD).
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double p_dmd = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict_p(const double* row) const {
        int idx = 0;
        while (nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const TreeNode& n = nodes[static_cast<std::size_t>(idx)];
            idx = row[n.feature] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(idx)].p_dmd;
    }
};

namespace detail {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
};

inline double gini(std::size_t n_dmd, std::size_t n) {
    if (n == 0) return 0.0;
    const double p = static_cast<double>(n_dmd) / static_cast<double>(n);
    return 2.0 * p * (1.0 - p);
}

/// Exhaustive best Gini split over the given feature subset; ties keep the
/// first candidate in (feature, threshold) order so trees are deterministic.
inline SplitChoice best_split(const DesignMatrix& m, const std::vector<std::size_t>& rows,
                              const std::vector<std::size_t>& features) {
    SplitChoice best;
    const std::size_t n = rows.size();
    std::size_t total_dmd = 0;
    for (const std::size_t r : rows) total_dmd += static_cast<std::size_t>(m.labels[r]);

    std::vector<std::pair<double, int>> vals(n);
    for (const std::size_t f : features) {
        for (std::size_t i = 0; i < n; ++i)
            vals[i] = {m.at(rows[i], f), m.labels[rows[i]]};
        std::sort(vals.begin(), vals.end());
        std::size_t left_dmd = 0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            left_dmd += static_cast<std::size_t>(vals[i].second);
            if (vals[i].first == vals[i + 1].first) continue;
            const std::size_t nl = i + 1, nr = n - nl;
            const double impurity =
                (static_cast<double>(nl) * gini(left_dmd, nl) +
                 static_cast<double>(nr) * gini(total_dmd - left_dmd, nr)) /
                static_cast<double>(n);
            if (impurity < best.impurity - 1e-15) {
                best.feature = static_cast<int>(f);
                best.threshold = (vals[i].first + vals[i + 1].first) / 2.0;
                best.impurity = impurity;
            }
        }
    }
    return best;
}

inline int build_tree(Tree& tree, const DesignMatrix& m, std::vector<std::size_t> rows,
                      const Hyper& hyper, Rng* feature_rng, std::size_t n_features_per_node) {
    const std::size_t n = rows.size();
    std::size_t n_dmd = 0;
    for (const std::size_t r : rows) n_dmd += static_cast<std::size_t>(m.labels[r]);

    const int node_idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.back().p_dmd = static_cast<double>(n_dmd) / static_cast<double>(n);

    const bool pure = (n_dmd == 0 || n_dmd == n);
    if (pure || n < static_cast<std::size_t>(hyper.min_split)) return node_idx;

    std::vector<std::size_t> features(m.n_cols);
    std::iota(features.begin(), features.end(), std::size_t{0});
    if (feature_rng && n_features_per_node < m.n_cols) {
        feature_rng->shuffle(features);
        features.resize(n_features_per_node);
        std::sort(features.begin(), features.end());
    }

    const SplitChoice split = best_split(m, rows, features);
    if (split.feature < 0) return node_idx;
    const double parent = gini(n_dmd, n);
    if (split.impurity >= parent - 1e-12) return node_idx;

    std::vector<std::size_t> left, right;
    for (const std::size_t r : rows)
        (m.at(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right)
            .push_back(r);
    if (left.empty() || right.empty()) return node_idx;

    rows.clear();
    rows.shrink_to_fit();
    const int l = build_tree(tree, m, std::move(left), hyper, feature_rng, n_features_per_node);
    const int r = build_tree(tree, m, std::move(right), hyper, feature_rng, n_features_per_node);
    tree.nodes[static_cast<std::size_t>(node_idx)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(node_idx)].threshold = split.threshold;
    tree.nodes[static_cast<std::size_t>(node_idx)].left = l;
    tree.nodes[static_cast<std::size_t>(node_idx)].right = r;
    return node_idx;
}

} // namespace detail

/// Mean cross-entropy loss of a logistic model plus L2 on the weights, and
/// its analytic gradient. Exposed standalone so the tests can compare the
/// gradient against finite differences.
inline double lr_loss_grad(const std::vector<double>& w, double b, const DesignMatrix& m,
                           double lambda, std::vector<double>& grad_w, double& grad_b) {
    const std::size_t n = m.n_rows, d = m.n_cols;
    grad_w.assign(d, 0.0);
    grad_b = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * m.at(i, j);
        const double y = static_cast<double>(m.labels[i]);
        // log(1 + e^z) - y z, computed stably for large |z|.
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        loss += softplus - y * z;
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double delta = p - y;
        for (std::size_t j = 0; j < d; ++j) grad_w[j] += delta * m.at(i, j);
        grad_b += delta;
    }
    const double inv = 1.0 / static_cast<double>(n);
    loss *= inv;
    grad_b *= inv;
    for (std::size_t j = 0; j < d; ++j) {
        grad_w[j] = grad_w[j] * inv + lambda * w[j];
        loss += 0.5 * lambda * w[j] * w[j];
    }
    return loss;
}

/// Hinge + L2 objective for the linear SVM (labels mapped to ±1).
inline double svm_objective(const std::vector<double>& w, double b, const DesignMatrix& m,
                            double lambda) {
    double loss = 0.0;
    for (std::size_t i = 0; i < m.n_rows; ++i) {
        double z = b;
        for (std::size_t j = 0; j < m.n_cols; ++j) z += w[j] * m.at(i, j);
        const double s = m.labels[i] == kLabelDMD ? 1.0 : -1.0;
        loss += std::max(0.0, 1.0 - s * z);
    }
    loss /= static_cast<double>(m.n_rows);
    double reg = 0.0;
    for (const double v : w) reg += v * v;
    return loss + 0.5 * lambda * reg;
}

/// A trained classifier with its preprocessing baked in: an optional
/// standardizer and an optional projection, both fit on training rows only.
struct Model {
    ModelKind kind = ModelKind::kNN;
    Hyper hyper;
    std::size_t dim_in = 0; // raw input width the model was trained on
    bool scaled = false;
    Scaler scaler;
    std::optional<Projection> projection;

    // kNN memory
    std::vector<double> train_data; // row-major, transformed space
    std::vector<int> train_labels;
    std::size_t train_cols = 0;

    // GNB parameters
    std::array<double, 2> class_prior{};
    std::array<std::vector<double>, 2> gnb_mean, gnb_var;

    // Linear models (LR, SVM)
    std::vector<double> weights;
    double bias = 0.0;

    // Trees (DT holds one, RF holds rf_trees)
    std::vector<Tree> trees;

    // Diagnostics
    std::vector<double> training_curve; // per-iteration/epoch objective
};

namespace detail {

inline DesignMatrix transform_for(const Model& model, const DesignMatrix& m) {
    DesignMatrix x = model.scaled ? standardize_apply(model.scaler, m) : m;
    if (model.projection) x = project(*model.projection, x);
    return x;
}

inline void train_gnb(Model& model, const DesignMatrix& x) {
    std::array<std::size_t, 2> count{};
    for (int y = 0; y < 2; ++y) {
        model.gnb_mean[static_cast<std::size_t>(y)].assign(x.n_cols, 0.0);
        model.gnb_var[static_cast<std::size_t>(y)].assign(x.n_cols, 0.0);
    }
    for (std::size_t i = 0; i < x.n_rows; ++i) {
        const auto y = static_cast<std::size_t>(x.labels[i]);
        ++count[y];
        for (std::size_t j = 0; j < x.n_cols; ++j) model.gnb_mean[y][j] += x.at(i, j);
    }
    for (int y = 0; y < 2; ++y)
        for (double& v : model.gnb_mean[static_cast<std::size_t>(y)])
            v /= static_cast<double>(count[static_cast<std::size_t>(y)]);
    for (std::size_t i = 0; i < x.n_rows; ++i) {
        const auto y = static_cast<std::size_t>(x.labels[i]);
        for (std::size_t j = 0; j < x.n_cols; ++j) {
            const double dlt = x.at(i, j) - model.gnb_mean[y][j];
            model.gnb_var[y][j] += dlt * dlt;
        }
    }
    for (int y = 0; y < 2; ++y)
        for (double& v : model.gnb_var[static_cast<std::size_t>(y)]) {
            v /= static_cast<double>(count[static_cast<std::size_t>(y)]);
            v = std::max(v, model.hyper.gnb_var_floor);
        }
    for (int y = 0; y < 2; ++y)
        model.class_prior[static_cast<std::size_t>(y)] =
            static_cast<double>(count[static_cast<std::size_t>(y)]) /
            static_cast<double>(x.n_rows);
}

inline void train_lr(Model& model, const DesignMatrix& x) {
    const std::size_t d = x.n_cols;
    model.weights.assign(d, 0.0);
    model.bias = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
    double loss = lr_loss_grad(model.weights, model.bias, x, model.hyper.lr_lambda, grad_w,
                               grad_b);
    double step = 1.0;
    for (int it = 0; it < model.hyper.lr_max_iters; ++it) {
        if (!std::isfinite(loss))
            throw NumericError("logistic loss became non-finite at iteration " +
                               std::to_string(it));
        double gnorm = grad_b * grad_b;
        for (const double g : grad_w) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        model.training_curve.push_back(loss);
        if (gnorm <= model.hyper.lr_grad_tol) break;

        // Backtracking line search along the negative gradient.
        while (true) {
            std::vector<double> w_try(d);
            for (std::size_t j = 0; j < d; ++j) w_try[j] = model.weights[j] - step * grad_w[j];
            const double b_try = model.bias - step * grad_b;
            std::vector<double> grad_w_try;
            double grad_b_try = 0.0;
            const double loss_try =
                lr_loss_grad(w_try, b_try, x, model.hyper.lr_lambda, grad_w_try, grad_b_try);
            if (loss_try <= loss || step < 1e-12) {
                model.weights = std::move(w_try);
                model.bias = b_try;
                loss = loss_try;
                grad_w = std::move(grad_w_try);
                grad_b = grad_b_try;
                step = std::min(step * 2.0, 1e3); // let the step grow back
                break;
            }
            step /= 2.0;
        }
    }
}

inline void train_svm(Model& model, const DesignMatrix& x, std::uint64_t seed) {
    const std::size_t n = x.n_rows, d = x.n_cols;
    model.weights.assign(d, 0.0);
    model.bias = 0.0;
    double lr = model.hyper.svm_lr0;
    const double lambda = model.hyper.svm_lambda;
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double prev = svm_objective(model.weights, model.bias, x, lambda);
    model.training_curve.push_back(prev);

    for (int epoch = 0; epoch < model.hyper.svm_epochs; ++epoch) {
        const std::vector<double> w_snap = model.weights;
        const double b_snap = model.bias;
        rng.shuffle(order);
        for (const std::size_t i : order) {
            double z = model.bias;
            for (std::size_t j = 0; j < d; ++j) z += model.weights[j] * x.at(i, j);
            const double s = x.labels[i] == kLabelDMD ? 1.0 : -1.0;
            // Subgradient of hinge(i) + (lambda/2)|w|^2.
            if (s * z < 1.0) {
                for (std::size_t j = 0; j < d; ++j)
                    model.weights[j] -= lr * (lambda * model.weights[j] - s * x.at(i, j));
                model.bias += lr * s;
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    model.weights[j] -= lr * lambda * model.weights[j];
            }
        }
        double obj = svm_objective(model.weights, model.bias, x, lambda);
        if (!std::isfinite(obj))
            throw NumericError("SVM objective became non-finite at epoch " +
                               std::to_string(epoch));
        if (obj > prev) {
            // A stochastic epoch overshot: roll back and cool the step size,
            // which keeps the per-epoch objective non-increasing.
            model.weights = w_snap;
            model.bias = b_snap;
            lr /= 2.0;
            obj = prev;
        }
        model.training_curve.push_back(obj);
        prev = obj;
    }
}

inline void train_trees(Model& model, const DesignMatrix& x, std::uint64_t seed) {
    if (model.kind == ModelKind::DT) {
        Tree t;
        std::vector<std::size_t> rows(x.n_rows);
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        build_tree(t, x, std::move(rows), model.hyper, nullptr, x.n_cols);
        model.trees.push_back(std::move(t));
        return;
    }
    const auto m_feat = static_cast<std::size_t>(
        std::max(1.0, std::floor(std::sqrt(static_cast<double>(x.n_cols)))));
    for (int t = 0; t < model.hyper.rf_trees; ++t) {
        Rng rng(sub_seed(seed, "tree/" + std::to_string(t)));
        std::vector<std::size_t> rows(x.n_rows);
        for (auto& r : rows) r = rng.below(x.n_rows);
        std::sort(rows.begin(), rows.end());
        // A bootstrap draw can miss one class entirely; resample until both
        // are present so every tree is a real classifier.
        bool ok = false;
        while (!ok) {
            bool td = false, dmd = false;
            for (const std::size_t r : rows) (x.labels[r] == kLabelDMD ? dmd : td) = true;
            ok = td && dmd;
            if (!ok) {
                for (auto& r : rows) r = rng.below(x.n_rows);
                std::sort(rows.begin(), rows.end());
            }
        }
        Tree tree;
        build_tree(tree, x, std::move(rows), model.hyper, &rng, m_feat);
        model.trees.push_back(std::move(tree));
    }
}

} // namespace detail

inline Model train(ModelKind kind, const DesignMatrix& train_set, const Hyper& hyper,
                   ProjectionKind projection, std::uint64_t seed) {
    hyper.validate();
    train_set.validate_for_training();

    Model model;
    model.kind = kind;
    model.hyper = hyper;
    model.dim_in = train_set.n_cols;

    // Trees split on raw columns (scale-invariant); everything else runs in
    // standardized space, as do both projections.
    const bool needs_scaling =
        projection != ProjectionKind::None ||
        (kind != ModelKind::DT && kind != ModelKind::RF);
    model.scaled = needs_scaling;
    DesignMatrix x = train_set;
    if (model.scaled) {
        model.scaler = standardize_fit(train_set);
        x = standardize_apply(model.scaler, train_set);
    }
    if (projection == ProjectionKind::PCA2) model.projection = pca_fit(x);
    if (projection == ProjectionKind::LDA1) model.projection = lda_fit(x);
    if (model.projection) x = project(*model.projection, x);

    switch (kind) {
        case ModelKind::kNN:
            if (static_cast<std::size_t>(hyper.knn_k) > x.n_rows)
                throw ParameterError("knn_k exceeds training size");
            model.train_data = x.data;
            model.train_labels = x.labels;
            model.train_cols = x.n_cols;
            break;
        case ModelKind::GNB: detail::train_gnb(model, x); break;
        case ModelKind::LR: detail::train_lr(model, x); break;
        case ModelKind::SVM: detail::train_svm(model, x, sub_seed(seed, "svm")); break;
        case ModelKind::DT:
        case ModelKind::RF: detail::train_trees(model, x, sub_seed(seed, "forest")); break;
    }
    return model;
}

inline std::vector<std::array<double, 2>> predict_proba(const Model& model,
                                                        const DesignMatrix& m) {
    if (m.n_cols != model.dim_in)
        throw ShapeError("column count does not match the trained model");
    const DesignMatrix x = detail::transform_for(model, m);
    std::vector<std::array<double, 2>> out(x.n_rows);

    switch (model.kind) {
        case ModelKind::kNN: {
            const std::size_t n_train = model.train_labels.size();
            const auto k = static_cast<std::size_t>(model.hyper.knn_k);
            std::vector<std::pair<double, std::size_t>> dist(n_train);
            for (std::size_t i = 0; i < x.n_rows; ++i) {
                for (std::size_t t = 0; t < n_train; ++t) {
                    double d2 = 0.0;
                    for (std::size_t j = 0; j < x.n_cols; ++j) {
                        const double dlt = x.at(i, j) - model.train_data[t * x.n_cols + j];
                        d2 += dlt * dlt;
                    }
                    dist[t] = {d2, t};
                }
                std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                                  dist.end());
                std::size_t votes = 0;
                for (std::size_t t = 0; t < k; ++t)
                    votes += static_cast<std::size_t>(model.train_labels[dist[t].second]);
                const double p = static_cast<double>(votes) / static_cast<double>(k);
                out[i] = {1.0 - p, p};
            }
            break;
        }
        case ModelKind::GNB: {
            for (std::size_t i = 0; i < x.n_rows; ++i) {
                std::array<double, 2> logp{};
                for (int y = 0; y < 2; ++y) {
                    const auto yy = static_cast<std::size_t>(y);
                    double acc = std::log(model.class_prior[yy]);
                    for (std::size_t j = 0; j < x.n_cols; ++j) {
                        const double var = model.gnb_var[yy][j];
                        const double dlt = x.at(i, j) - model.gnb_mean[yy][j];
                        acc += -0.5 * (std::log(2.0 * M_PI * var) + dlt * dlt / var);
                    }
                    logp[yy] = acc;
                }
                const double mx = std::max(logp[0], logp[1]);
                const double e0 = std::exp(logp[0] - mx), e1 = std::exp(logp[1] - mx);
                out[i] = {e0 / (e0 + e1), e1 / (e0 + e1)};
            }
            break;
        }
        case ModelKind::LR:
        case ModelKind::SVM: {
            for (std::size_t i = 0; i < x.n_rows; ++i) {
                double z = model.bias;
                for (std::size_t j = 0; j < x.n_cols; ++j) z += model.weights[j] * x.at(i, j);
                const double p = 1.0 / (1.0 + std::exp(-z));
                out[i] = {1.0 - p, p};
            }
            break;
        }
        case ModelKind::DT:
        case ModelKind::RF: {
            for (std::size_t i = 0; i < x.n_rows; ++i) {
                double p = 0.0;
                for (const Tree& t : model.trees) p += t.predict_p(&x.data[i * x.n_cols]);
                p /= static_cast<double>(model.trees.size());
                out[i] = {1.0 - p, p};
            }
            break;
        }
    }
    return out;
}

/// Hard labels; a tied score goes to DMD (detection-oriented).
inline std::vector<int> predict(const Model& model, const DesignMatrix& m) {
    const auto proba = predict_proba(model, m);
    std::vector<int> labels(proba.size());
    for (std::size_t i = 0; i < proba.size(); ++i)
        labels[i] = proba[i][1] >= proba[i][0] ? kLabelDMD : kLabelTD;
    return labels;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Projection& p) {
    return {{"kind", p.kind == Projection::Kind::PCA2 ? "pca2" : "lda1"},
            {"mean", p.mean},
            {"basis", p.basis},
            {"explained", p.explained},
            {"dim_in", p.dim_in},
            {"dim_out", p.dim_out}};
}

inline Projection projection_from_json(const nlohmann::json& j) {
    Projection p;
    p.kind = j.at("kind") == "pca2" ? Projection::Kind::PCA2 : Projection::Kind::LDA1;
    p.mean = j.at("mean").get<std::vector<double>>();
    p.basis = j.at("basis").get<std::vector<double>>();
    p.explained = j.at("explained").get<std::vector<double>>();
    p.dim_in = j.at("dim_in").get<std::size_t>();
    p.dim_out = j.at("dim_out").get<std::size_t>();
    return p;
}

inline nlohmann::json to_json(const Tree& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes)
        nodes.push_back({{"f", n.feature},
                         {"thr", n.threshold},
                         {"l", n.left},
                         {"r", n.right},
                         {"p", n.p_dmd}});
    return nodes;
}

inline Tree tree_from_json(const nlohmann::json& j) {
    Tree t;
    for (const auto& jn : j) {
        TreeNode n;
        n.feature = jn.at("f").get<int>();
        n.threshold = jn.at("thr").get<double>();
        n.left = jn.at("l").get<int>();
        n.right = jn.at("r").get<int>();
        n.p_dmd = jn.at("p").get<double>();
        t.nodes.push_back(n);
    }
    return t;
}

inline nlohmann::json to_json(const Model& m) {
    nlohmann::json j;
    j["kind"] = to_string(m.kind);
    j["dim_in"] = m.dim_in;
    j["hyper"] = {{"knn_k", m.hyper.knn_k},
                  {"rf_trees", m.hyper.rf_trees},
                  {"min_split", m.hyper.min_split},
                  {"svm_lambda", m.hyper.svm_lambda},
                  {"svm_epochs", m.hyper.svm_epochs},
                  {"svm_lr0", m.hyper.svm_lr0},
                  {"lr_lambda", m.hyper.lr_lambda},
                  {"lr_max_iters", m.hyper.lr_max_iters},
                  {"lr_grad_tol", m.hyper.lr_grad_tol},
                  {"gnb_var_floor", m.hyper.gnb_var_floor}};
    j["scaled"] = m.scaled;
    if (m.scaled) j["scaler"] = {{"mean", m.scaler.mean}, {"scale", m.scaler.scale}};
    j["projection"] = m.projection ? to_json(*m.projection) : nlohmann::json(nullptr);
    nlohmann::json params;
    switch (m.kind) {
        case ModelKind::kNN:
            params = {{"train_data", m.train_data},
                      {"train_labels", m.train_labels},
                      {"train_cols", m.train_cols}};
            break;
        case ModelKind::GNB:
            params = {{"prior", m.class_prior},
                      {"mean_td", m.gnb_mean[0]},
                      {"mean_dmd", m.gnb_mean[1]},
                      {"var_td", m.gnb_var[0]},
                      {"var_dmd", m.gnb_var[1]}};
            break;
        case ModelKind::LR:
        case ModelKind::SVM:
            params = {{"weights", m.weights}, {"bias", m.bias}};
            break;
        case ModelKind::DT:
        case ModelKind::RF: {
            nlohmann::json trees = nlohmann::json::array();
            for (const Tree& t : m.trees) trees.push_back(to_json(t));
            params = {{"trees", trees}};
            break;
        }
    }
    j["params"] = params;
    return j;
}

inline Model model_from_json(const nlohmann::json& j) {
    Model m;
    const auto kind = model_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) throw ParseError("unknown model kind in serialized model");
    m.kind = *kind;
    m.dim_in = j.at("dim_in").get<std::size_t>();
    const auto& h = j.at("hyper");
    m.hyper.knn_k = h.at("knn_k").get<int>();
    m.hyper.rf_trees = h.at("rf_trees").get<int>();
    m.hyper.min_split = h.at("min_split").get<int>();
    m.hyper.svm_lambda = h.at("svm_lambda").get<double>();
    m.hyper.svm_epochs = h.at("svm_epochs").get<int>();
    m.hyper.svm_lr0 = h.at("svm_lr0").get<double>();
    m.hyper.lr_lambda = h.at("lr_lambda").get<double>();
    m.hyper.lr_max_iters = h.at("lr_max_iters").get<int>();
    m.hyper.lr_grad_tol = h.at("lr_grad_tol").get<double>();
    m.hyper.gnb_var_floor = h.at("gnb_var_floor").get<double>();
    m.scaled = j.at("scaled").get<bool>();
    if (m.scaled) {
        m.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
        m.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    }
    if (!j.at("projection").is_null()) m.projection = projection_from_json(j.at("projection"));
    const auto& p = j.at("params");
    switch (m.kind) {
        case ModelKind::kNN:
            m.train_data = p.at("train_data").get<std::vector<double>>();
            m.train_labels = p.at("train_labels").get<std::vector<int>>();
            m.train_cols = p.at("train_cols").get<std::size_t>();
            break;
        case ModelKind::GNB:
            m.class_prior = p.at("prior").get<std::array<double, 2>>();
            m.gnb_mean[0] = p.at("mean_td").get<std::vector<double>>();
            m.gnb_mean[1] = p.at("mean_dmd").get<std::vector<double>>();
            m.gnb_var[0] = p.at("var_td").get<std::vector<double>>();
            m.gnb_var[1] = p.at("var_dmd").get<std::vector<double>>();
            break;
        case ModelKind::LR:
        case ModelKind::SVM:
            m.weights = p.at("weights").get<std::vector<double>>();
            m.bias = p.at("bias").get<double>();
            break;
        case ModelKind::DT:
        case ModelKind::RF:
            for (const auto& jt : p.at("trees")) m.trees.push_back(tree_from_json(jt));
            break;
    }
    return m;
}

} // namespace gaitlab::ml
