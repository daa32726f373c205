#include "apcon/physics.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <thread>

#include "apcon/errors.hpp"

namespace apcon {

using ad::Index;
using ad::Matrix;
using ad::Var;

ProblemId problem_from_name(std::string_view name) {
  if (name == "I" || name == "1") return ProblemId::I;
  if (name == "II" || name == "2") return ProblemId::II;
  throw ConfigError("unknown problem '" + std::string(name) + "' (expected I or II)");
}

std::string problem_name(ProblemId p) { return p == ProblemId::I ? "I" : "II"; }

void ProblemSpec::validate() const {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(t_max > 0.0)) throw ConfigError("t_max must be positive");
  if (!(x_left < x_right)) throw ConfigError("x_left must be below x_right");
}

ProblemSpec ProblemSpec::problem1(double eps) {
  ProblemSpec p;
  p.id = ProblemId::I;
  p.eps = eps;
  p.t_max = eps == 1.0 ? 0.5 : 0.1;
  p.boundary = BoundaryKind::Inflow;
  p.left_value = 1.0;
  p.right_value = 0.5;
  return p;
}

ProblemSpec ProblemSpec::problem2(double eps) {
  ProblemSpec p;
  p.id = ProblemId::II;
  p.eps = eps;
  p.t_max = 0.1;
  p.boundary = BoundaryKind::Dirichlet;
  p.left_value = 0.0;
  p.right_value = 0.0;
  return p;
}

ProblemSpec ProblemSpec::make(ProblemId id, double eps) {
  return id == ProblemId::I ? problem1(eps) : problem2(eps);
}

namespace {

struct UniquePairs {
  Eigen::Matrix2Xd unique;
  std::vector<Index> index;
  bool identity = true;
};

UniquePairs dedup(const Eigen::Matrix2Xd& tx) {
  std::map<std::pair<double, double>, Index> seen;
  UniquePairs u;
  std::vector<Index> order;
  u.index.resize(static_cast<std::size_t>(tx.cols()));
  for (Index n = 0; n < tx.cols(); ++n) {
    auto [it, inserted] = seen.emplace(std::make_pair(tx(0, n), tx(1, n)), static_cast<Index>(order.size()));
    if (inserted) order.push_back(n);
    u.index[static_cast<std::size_t>(n)] = it->second;
    if (it->second != n) u.identity = false;
  }
  u.unique.resize(2, static_cast<Index>(order.size()));
  for (std::size_t i = 0; i < order.size(); ++i) u.unique.col(static_cast<Index>(i)) = tx.col(order[i]);
  return u;
}

Eigen::Matrix3Xd with_mirror(const Eigen::Matrix3Xd& points) {
  Eigen::Matrix3Xd pm(3, 2 * points.cols());
  pm.leftCols(points.cols()) = points;
  pm.rightCols(points.cols()) = points;
  pm.row(2).tail(points.cols()) *= -1.0;
  return pm;
}

}  // namespace

FieldEvaluator::FieldEvaluator(ad::Tape& tape, const FieldSet& fields, const ProblemSpec& problem,
                               const Eigen::MatrixXd& a)
    : tape_(tape), fields_(fields), problem_(problem), batch_(a.cols()) {
  fields_.validate();
  if (fields_.formulation == Formulation::EvenOdd && !fields_.quadrature.symmetric())
    throw ConfigError("even-odd fields need a symmetric velocity quadrature");
  Var av = tape_.constant(a);
  for (const auto* net : fields_.nets) enc_.push_back(net->encode(tape_, av));
}

FieldEvaluator::FieldEvaluator(ad::Tape& tape, const FieldSet& fields, const ProblemSpec& problem,
                               std::vector<Var> encodings, Index batch)
    : tape_(tape), fields_(fields), problem_(problem), enc_(std::move(encodings)), batch_(batch) {
  fields_.validate();
  if (fields_.formulation == Formulation::EvenOdd && !fields_.quadrature.symmetric())
    throw ConfigError("even-odd fields need a symmetric velocity quadrature");
  if (enc_.size() != fields_.nets.size()) throw ShapeError("one encoding per net is required");
}

FieldEvaluator::Partials FieldEvaluator::raw(std::size_t k, const Eigen::MatrixXd& coords, bool want_t,
                                             bool want_x) {
  std::vector<Index> wrt;
  if (want_t) wrt.push_back(0);
  if (want_x) wrt.push_back(1);
  ad::Jet y = ad::seed_coordinates(tape_, coords, wrt);
  ad::Jet out = fields_.nets[k]->evaluate(tape_, enc_[k], y, batch_);
  const auto& v = tape_.value(out.value);
  if (v.rows() != batch_ || v.cols() != coords.cols())
    throw ShapeError("field net returned " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                     ", expected " + std::to_string(batch_) + "x" + std::to_string(coords.cols()));
  Partials p{out.value, {}, {}};
  std::size_t idx = 0;
  if (want_t) p.dt = ad::tangent_or_zero(tape_, out, idx++);
  if (want_x) p.dx = ad::tangent_or_zero(tape_, out, idx++);
  return p;
}

Var FieldEvaluator::wrap(Var g) {
  if (fields_.formulation == Formulation::PiDon && fields_.positive_wrap)
    return tape_.activation(g, ad::Activation::Softplus);
  return g;
}

Var FieldEvaluator::zeros(Index cols) { return tape_.constant(Matrix::Zero(batch_, cols)); }

Var FieldEvaluator::row_constant(const Eigen::RowVectorXd& row) {
  return tape_.constant(row.replicate(batch_, 1));
}

Var FieldEvaluator::source(const Eigen::Matrix2Xd& tx) {
  if (!problem_.source) return zeros(tx.cols());
  Eigen::RowVectorXd q(tx.cols());
  for (Index n = 0; n < tx.cols(); ++n) q(n) = problem_.source(tx(0, n), tx(1, n));
  return row_constant(q);
}

Eigen::Matrix3Xd FieldEvaluator::node_coords(const Eigen::Matrix2Xd& tx) const {
  const auto& nodes = fields_.quadrature.nodes();
  const Index q = static_cast<Index>(nodes.size());
  Eigen::Matrix3Xd c(3, tx.cols() * q);
  for (Index n = 0; n < tx.cols(); ++n)
    for (Index k = 0; k < q; ++k) c.col(n * q + k) << tx(0, n), tx(1, n), nodes[static_cast<std::size_t>(k)];
  return c;
}

std::vector<Index> FieldEvaluator::mirror_indices(Index n_points) const {
  const Index q = static_cast<Index>(fields_.quadrature.size());
  std::vector<Index> idx(static_cast<std::size_t>(n_points * q));
  for (Index n = 0; n < n_points; ++n)
    for (Index k = 0; k < q; ++k)
      idx[static_cast<std::size_t>(n * q + k)] =
          n * q + static_cast<Index>(fields_.quadrature.mirror(static_cast<std::size_t>(k)));
  return idx;
}

Var FieldEvaluator::node_mean_at(std::size_t k, const Eigen::Matrix2Xd& tx) {
  UniquePairs u = dedup(tx);
  Var g = raw(k, node_coords(u.unique), false, false).value;
  Var mean = tape_.group_moment(g, fields_.quadrature.weights_vector());
  return u.identity ? mean : tape_.gather_cols(mean, u.index);
}

std::vector<Var> FieldEvaluator::interior(const Eigen::Matrix3Xd& points) {
  const double eps = problem_.eps, eps2 = eps * eps;
  const Index n = points.cols();
  const Index q = static_cast<Index>(fields_.quadrature.size());
  const Eigen::VectorXd w = fields_.quadrature.weights_vector();
  const Eigen::Matrix2Xd tx = points.topRows(2);
  Var v = row_constant(points.row(2));
  // Velocity moments depend on (t, x) only; points sharing a pair share them.
  const UniquePairs u = dedup(tx);
  const Index nu = u.unique.cols();
  auto spread = [&](Var x) { return u.identity ? x : tape_.gather_cols(x, u.index); };
  auto node_velocities = [&] {
    Eigen::RowVectorXd vn(nu * q);
    for (Index i = 0; i < nu; ++i)
      for (Index k = 0; k < q; ++k) vn(i * q + k) = fields_.quadrature.nodes()[static_cast<std::size_t>(k)];
    return row_constant(vn);
  };

  switch (fields_.formulation) {
    case Formulation::PiDon: {
      Partials g = raw(0, points, true, true);
      Var f = g.value, ft = g.dt, fx = g.dx;
      if (fields_.positive_wrap) {
        f = tape_.activation(g.value, ad::Activation::Softplus);
        Var d = tape_.activation(g.value, ad::Activation::Softplus, 1);
        ft = tape_.mul(d, g.dt);
        fx = tape_.mul(d, g.dx);
      }
      Var mean = spread(tape_.group_moment(wrap(raw(0, node_coords(u.unique), false, false).value), w));
      Var res = tape_.add(tape_.add(tape_.scale(ft, eps2), tape_.scale(tape_.mul(v, fx), eps)),
                          tape_.sub(f, mean));
      return {res};
    }
    case Formulation::MicroMacro: {
      Partials rho = raw(0, tx, true, true);
      Partials gn = raw(1, node_coords(u.unique), true, true);
      Partials go = raw(1, points, true, true);
      Var mgx_u = tape_.group_moment(gn.dx, w);
      Var g = tape_.sub(go.value, spread(tape_.group_moment(gn.value, w)));
      Var gt = tape_.sub(go.dt, spread(tape_.group_moment(gn.dt, w)));
      Var gx = tape_.sub(go.dx, spread(mgx_u));
      Var gnx = tape_.sub(gn.dx, tape_.group_broadcast(mgx_u, q));
      Var vgx = spread(tape_.group_moment(tape_.mul(node_velocities(), gnx), w));
      Var macro = tape_.sub(tape_.add(rho.dt, vgx), source(tx));
      // L g = ⟨g⟩ − g and ⟨g⟩ vanishes by construction; (I − Π)(εQ) = 0 since Q is v-independent.
      Var transport = tape_.scale(tape_.sub(tape_.mul(v, gx), vgx), eps);
      Var micro = tape_.add(tape_.add(tape_.scale(gt, eps2), transport), tape_.add(tape_.mul(v, rho.dx), g));
      return {macro, micro};
    }
    case Formulation::EvenOdd: {
      const Eigen::Matrix3Xd pm = with_mirror(points);
      Partials rho = raw(0, tx, true, false);
      Partials gr = raw(1, pm, true, true);
      Partials gj = raw(2, pm, true, true);
      auto half_sum = [&](Var x) { return tape_.scale(tape_.add(tape_.cols(x, 0, n), tape_.cols(x, n, n)), 0.5); };
      auto diff = [&](Var x) { return tape_.sub(tape_.cols(x, 0, n), tape_.cols(x, n, n)); };
      Var r = half_sum(gr.value), rt = half_sum(gr.dt), rx = half_sum(gr.dx);
      Var j = diff(gj.value), jt = diff(gj.dt), jx = diff(gj.dx);

      const Eigen::Matrix3Xd nodes = node_coords(u.unique);
      const auto mirror = mirror_indices(nu);
      Var grn = raw(1, nodes, false, false).value;
      Var rn = tape_.scale(tape_.add(grn, tape_.gather_cols(grn, mirror)), 0.5);
      Var mean_r = spread(tape_.group_moment(rn, w));
      Var gjnx = raw(2, nodes, false, true).dx;
      Var jnx = tape_.sub(gjnx, tape_.gather_cols(gjnx, mirror));
      Var vjx = spread(tape_.group_moment(tape_.mul(node_velocities(), jnx), w));

      Var qsrc = source(tx);
      Var even = tape_.sub(tape_.add(tape_.scale(tape_.add(rt, tape_.mul(v, jx)), eps2), tape_.sub(r, rho.value)),
                           tape_.scale(qsrc, eps2));
      Var odd = tape_.add(tape_.add(tape_.scale(jt, eps2), tape_.mul(v, rx)), j);
      Var macro = tape_.sub(tape_.add(rho.dt, vjx), qsrc);
      Var constraint = tape_.sub(rho.value, mean_r);
      return {even, odd, macro, constraint};
    }
  }
  return {};
}

Var FieldEvaluator::reconstruct_f(const Eigen::Matrix3Xd& points) {
  const double eps = problem_.eps;
  const Index n = points.cols();
  switch (fields_.formulation) {
    case Formulation::PiDon:
      return wrap(raw(0, points, false, false).value);
    case Formulation::MicroMacro: {
      const Eigen::Matrix2Xd tx = points.topRows(2);
      UniquePairs u = dedup(tx);
      Var rho = raw(0, u.unique, false, false).value;
      if (!u.identity) rho = tape_.gather_cols(rho, u.index);
      Var g = tape_.sub(raw(1, points, false, false).value, node_mean_at(1, tx));
      return tape_.add(rho, tape_.scale(g, eps));
    }
    case Formulation::EvenOdd: {
      const Eigen::Matrix3Xd pm = with_mirror(points);
      Var gr = raw(1, pm, false, false).value;
      Var gj = raw(2, pm, false, false).value;
      Var r = tape_.scale(tape_.add(tape_.cols(gr, 0, n), tape_.cols(gr, n, n)), 0.5);
      Var j = tape_.sub(tape_.cols(gj, 0, n), tape_.cols(gj, n, n));
      return tape_.add(r, tape_.scale(j, eps));
    }
  }
  return {};
}

Var FieldEvaluator::boundary(const std::vector<BoundaryPoint>& points) {
  const Index n = static_cast<Index>(points.size());
  Eigen::Matrix3Xd c(3, n);
  Eigen::RowVectorXd target(n);
  for (Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    if (problem_.boundary == BoundaryKind::Inflow) {
      if (p.side == Side::Left && !(p.v > 0.0))
        throw DomainError("inflow boundary at x_left needs v > 0, got " + std::to_string(p.v));
      if (p.side == Side::Right && !(p.v < 0.0))
        throw DomainError("inflow boundary at x_right needs v < 0, got " + std::to_string(p.v));
    }
    c.col(i) << p.t, p.side == Side::Left ? problem_.x_left : problem_.x_right, p.v;
    target(i) = problem_.boundary_value(p.side);
  }
  return tape_.sub(reconstruct_f(c), row_constant(target));
}

Var FieldEvaluator::density(const Eigen::Matrix2Xd& tx) {
  if (fields_.formulation == Formulation::PiDon)
    return tape_.group_moment(f_at_nodes(tx), fields_.quadrature.weights_vector());
  return raw(0, tx, false, false).value;
}

std::pair<Var, Var> FieldEvaluator::micro_macro_at_nodes(const Eigen::Matrix2Xd& tx) {
  if (fields_.formulation != Formulation::MicroMacro) throw ConfigError("fields are not micro-macro");
  const Index q = static_cast<Index>(fields_.quadrature.size());
  Var rho = raw(0, tx, false, false).value;
  Var gn = raw(1, node_coords(tx), false, false).value;
  Var mean = tape_.group_moment(gn, fields_.quadrature.weights_vector());
  return {rho, tape_.sub(gn, tape_.group_broadcast(mean, q))};
}

std::tuple<Var, Var, Var> FieldEvaluator::even_odd_at_nodes(const Eigen::Matrix2Xd& tx) {
  if (fields_.formulation != Formulation::EvenOdd) throw ConfigError("fields are not even-odd");
  const auto mirror = mirror_indices(tx.cols());
  const Eigen::Matrix3Xd nodes = node_coords(tx);
  Var rho = raw(0, tx, false, false).value;
  Var gr = raw(1, nodes, false, false).value;
  Var gj = raw(2, nodes, false, false).value;
  Var r = tape_.scale(tape_.add(gr, tape_.gather_cols(gr, mirror)), 0.5);
  Var j = tape_.sub(gj, tape_.gather_cols(gj, mirror));
  return {rho, r, j};
}

Var FieldEvaluator::f_at_nodes(const Eigen::Matrix2Xd& tx) {
  if (fields_.formulation != Formulation::PiDon) throw ConfigError("fields are not PIDON-type");
  return wrap(raw(0, node_coords(tx), false, false).value);
}

Reduction reduction_from_name(std::string_view name) {
  if (name == "sequential") return Reduction::Sequential;
  if (name == "pairwise") return Reduction::Pairwise;
  throw ConfigError("unknown reduction '" + std::string(name) + "' (sequential|pairwise)");
}

std::string reduction_name(Reduction r) { return r == Reduction::Sequential ? "sequential" : "pairwise"; }

Reduction reduction_from_env(Reduction fallback) {
  const char* s = std::getenv("APCON_REDUCTION");
  if (s == nullptr || *s == '\0') return fallback;
  return reduction_from_name(s);
}

namespace {

template <typename T, typename Add>
T reduce(std::vector<T> items, Reduction order, Add add) {
  if (items.empty()) return T{};
  if (order == Reduction::Sequential) {
    T acc = std::move(items[0]);
    for (std::size_t i = 1; i < items.size(); ++i) add(acc, items[i]);
    return acc;
  }
  while (items.size() > 1) {
    std::vector<T> next;
    for (std::size_t i = 0; i + 1 < items.size(); i += 2) {
      add(items[i], items[i + 1]);
      next.push_back(std::move(items[i]));
    }
    if (items.size() % 2 == 1) next.push_back(std::move(items.back()));
    items = std::move(next);
  }
  return std::move(items[0]);
}

enum class TaskKind { Interior, Boundary, Initial };

struct Task {
  TaskKind kind;
  Index start, count;
};

struct TaskOutput {
  std::vector<double> terms;
  std::vector<double> gradient;
  std::vector<Matrix> encoding_grads;
};

void add_into(std::vector<double>& acc, const std::vector<double>& x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

}  // namespace

RiskResult evaluate_risk(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                         const InputGrid& grid, const Eigen::MatrixXd& a, const CollocationBatch& batch,
                         bool with_gradient, const RiskOptions& options) {
  fields.validate();
  problem.validate();
  const Index b = a.cols();
  if (b == 0) throw ConfigError("empirical risk over an empty batch");
  if (a.rows() != grid.size())
    throw ShapeError("input functions have " + std::to_string(a.rows()) + " values, grid has " +
                     std::to_string(grid.size()));
  if (with_gradient && params == nullptr) throw ConfigError("risk gradient needs a parameter vector");
  if (options.chunk_points < 1) throw ConfigError("chunk_points must be positive");

  ad::Tape branch_tape(params);
  Var av = branch_tape.constant(a);
  std::vector<Var> enc;
  for (const auto* net : fields.nets) enc.push_back(net->encode(branch_tape, av));

  const std::size_t n_fam = expected_net_count(fields.formulation) == 1 ? 1
                            : fields.formulation == Formulation::MicroMacro ? 2 : 4;
  const Index n_int = batch.interior.cols();
  const Index n_bdy = static_cast<Index>(batch.boundary.size());
  const Index n_init = static_cast<Index>(batch.initial.size());

  std::vector<Task> tasks;
  auto add_tasks = [&](TaskKind kind, Index total) {
    for (Index s = 0; s < total; s += options.chunk_points)
      tasks.push_back({kind, s, std::min(options.chunk_points, total - s)});
  };
  add_tasks(TaskKind::Interior, n_int);
  add_tasks(TaskKind::Boundary, n_bdy);
  add_tasks(TaskKind::Initial, n_init);

  auto run = [&](const Task& task) {
    TaskOutput out;
    out.terms.assign(n_fam + 2, 0.0);
    ad::Tape tape(params);
    std::vector<Var> leaves;
    for (Var e : enc) {
      if (!e.valid())
        leaves.push_back(Var{});
      else
        leaves.push_back(with_gradient ? tape.input(branch_tape.value(e)) : tape.constant(branch_tape.value(e)));
    }
    FieldEvaluator ev(tape, fields, problem, leaves, b);
    Var contribution;
    auto accumulate_term = [&](Var residual, Index total, std::size_t slot) {
      Var term = tape.scale(tape.mean_square(residual), static_cast<double>(task.count) / static_cast<double>(total));
      out.terms[slot] = tape.scalar(term);
      contribution = contribution.valid() ? tape.add(contribution, term) : term;
    };
    switch (task.kind) {
      case TaskKind::Interior: {
        auto fam = ev.interior(batch.interior.middleCols(task.start, task.count));
        for (std::size_t f = 0; f < fam.size(); ++f) accumulate_term(fam[f], n_int, f);
        break;
      }
      case TaskKind::Boundary: {
        std::vector<BoundaryPoint> pts(batch.boundary.begin() + task.start,
                                       batch.boundary.begin() + task.start + task.count);
        accumulate_term(ev.boundary(pts), n_bdy, n_fam);
        break;
      }
      case TaskKind::Initial: {
        Eigen::Matrix3Xd c(3, task.count);
        Matrix target(b, task.count);
        for (Index i = 0; i < task.count; ++i) {
          const Index flat = batch.initial[static_cast<std::size_t>(task.start + i)];
          if (flat < 0 || flat >= grid.size()) throw DomainError("initial point index outside the input grid");
          c.col(i) << 0.0, grid.x_at(flat), grid.v_at(flat);
          target.col(i) = a.row(flat).transpose();
        }
        accumulate_term(tape.sub(ev.reconstruct_f(c), tape.constant(std::move(target))), n_init, n_fam + 1);
        break;
      }
    }
    if (with_gradient) {
      tape.backward(contribution);
      out.gradient.assign(params->size(), 0.0);
      tape.accumulate_parameter_gradient(out.gradient);
      for (Var l : leaves) out.encoding_grads.push_back(l.valid() ? tape.grad(l) : Matrix());
    }
    return out;
  };

  std::vector<TaskOutput> outputs(tasks.size());
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(tasks.size())));
  if (threads <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) outputs[i] = run(tasks[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < tasks.size(); i = next++) outputs[i] = run(tasks[i]);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  RiskResult result;
  std::vector<std::vector<double>> term_items;
  for (auto& o : outputs) term_items.push_back(o.terms);
  std::vector<double> terms = reduce(std::move(term_items), options.reduction, add_into);
  terms.resize(n_fam + 2, 0.0);
  result.terms.interior.assign(terms.begin(), terms.begin() + static_cast<long>(n_fam));
  result.terms.boundary = terms[n_fam];
  result.terms.initial = terms[n_fam + 1];
  result.terms.total = 0.0;
  for (double t : terms) result.terms.total += t;

  if (with_gradient) {
    std::vector<std::vector<double>> grads;
    for (auto& o : outputs) grads.push_back(std::move(o.gradient));
    result.gradient = reduce(std::move(grads), options.reduction, add_into);
    result.gradient.resize(params->size(), 0.0);

    Var seed_sum;
    for (std::size_t k = 0; k < enc.size(); ++k) {
      if (!enc[k].valid()) continue;
      std::vector<Matrix> parts;
      for (auto& o : outputs) parts.push_back(std::move(o.encoding_grads[k]));
      Matrix g = reduce(std::move(parts), options.reduction, [](Matrix& acc, const Matrix& x) { acc += x; });
      if (g.size() == 0) continue;
      Var s = branch_tape.sum_all(branch_tape.mul(enc[k], branch_tape.constant(std::move(g))));
      seed_sum = seed_sum.valid() ? branch_tape.add(seed_sum, s) : s;
    }
    if (seed_sum.valid()) {
      branch_tape.backward(seed_sum);
      branch_tape.accumulate_parameter_gradient(result.gradient);
    }
  }
  return result;
}

double empirical_risk(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                      const InputGrid& grid, const Eigen::MatrixXd& a, const CollocationBatch& batch) {
  return evaluate_risk(fields, params, problem, grid, a, batch, false).terms.total;
}

Eigen::MatrixXd predict_density(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                                const Eigen::MatrixXd& a, const Eigen::Matrix2Xd& tx, Index chunk_points) {
  fields.validate();
  if (chunk_points < 1) throw ConfigError("chunk_points must be positive");
  ad::Tape branch(params);
  Var av = branch.constant(a);
  std::vector<Matrix> enc;
  for (const auto* net : fields.nets) {
    Var e = net->encode(branch, av);
    enc.push_back(e.valid() ? branch.value(e) : Matrix());
  }
  Eigen::MatrixXd out(a.cols(), tx.cols());
  for (Index s = 0; s < tx.cols(); s += chunk_points) {
    const Index c = std::min(chunk_points, tx.cols() - s);
    ad::Tape tape(params);
    std::vector<Var> leaves;
    for (const auto& e : enc) leaves.push_back(e.size() ? tape.constant(e) : Var{});
    FieldEvaluator ev(tape, fields, problem, leaves, a.cols());
    out.middleCols(s, c) = tape.value(ev.density(tx.middleCols(s, c)));
  }
  return out;
}

namespace {

Eigen::MatrixXd column(std::span<const double> a) {
  return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Index>(a.size()));
}

const ProblemSpec& neutral_problem() {
  static const ProblemSpec p;
  return p;
}

void require(const FieldSet& fields, Formulation f, const char* what) {
  if (fields.formulation != f) throw ConfigError(std::string(what) + ": model has the wrong formulation");
}

std::vector<double> row_values(const ad::Tape& tape, Var v) {
  const auto& m = tape.value(v);
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Index i = 0; i < m.cols(); ++i) out[static_cast<std::size_t>(i)] = m(0, i);
  return out;
}

}  // namespace

double eval_f_pidon(const FieldSet& fields, const ParameterVector* params, std::span<const double> a, double t,
                    double x, double v) {
  require(fields, Formulation::PiDon, "eval_f_pidon");
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, neutral_problem(), column(a));
  Eigen::Matrix3Xd p(3, 1);
  p << t, x, v;
  return tape.value(ev.reconstruct_f(p))(0, 0);
}

MicroMacroValues eval_rho_g_v1(const FieldSet& fields, const ParameterVector* params, std::span<const double> a,
                               double t, double x) {
  require(fields, Formulation::MicroMacro, "eval_rho_g_v1");
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, neutral_problem(), column(a));
  Eigen::Matrix2Xd tx(2, 1);
  tx << t, x;
  auto [rho, g] = ev.micro_macro_at_nodes(tx);
  return {tape.value(rho)(0, 0), row_values(tape, g)};
}

EvenOddValues eval_rho_r_j_v2(const FieldSet& fields, const ParameterVector* params, std::span<const double> a,
                              double t, double x) {
  require(fields, Formulation::EvenOdd, "eval_rho_r_j_v2");
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, neutral_problem(), column(a));
  Eigen::Matrix2Xd tx(2, 1);
  tx << t, x;
  auto [rho, r, j] = ev.even_odd_at_nodes(tx);
  return {tape.value(rho)(0, 0), row_values(tape, r), row_values(tape, j)};
}

namespace {

std::vector<double> interior_at(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                                std::span<const double> a, double t, double x, double v) {
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, problem, column(a));
  Eigen::Matrix3Xd p(3, 1);
  p << t, x, v;
  std::vector<double> out;
  for (Var r : ev.interior(p)) out.push_back(tape.value(r)(0, 0));
  return out;
}

}  // namespace

double residual_pidon(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                      std::span<const double> a, double t, double x, double v) {
  require(fields, Formulation::PiDon, "residual_pidon");
  return interior_at(fields, params, problem, a, t, x, v)[0];
}

MicroMacroResidual residual_v1(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                               std::span<const double> a, double t, double x, double v) {
  require(fields, Formulation::MicroMacro, "residual_v1");
  auto r = interior_at(fields, params, problem, a, t, x, v);
  return {r[0], r[1]};
}

EvenOddResidual residual_v2(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                            std::span<const double> a, double t, double x, double v) {
  require(fields, Formulation::EvenOdd, "residual_v2");
  auto r = interior_at(fields, params, problem, a, t, x, v);
  return {r[0], r[1], r[2], r[3]};
}

double boundary_residual(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                         std::span<const double> a, double t, double v, Side side) {
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, problem, column(a));
  return tape.value(ev.boundary({BoundaryPoint{t, v, side}}))(0, 0);
}

double initial_residual(const FieldSet& fields, const ParameterVector* params, const ProblemSpec& problem,
                        const InputGrid& grid, std::span<const double> a, double x, double v) {
  auto find = [](const std::vector<double>& axis, double value) -> Index {
    for (std::size_t i = 0; i < axis.size(); ++i)
      if (std::abs(axis[i] - value) <= 1e-12) return static_cast<Index>(i);
    return -1;
  };
  const Index h = find(grid.x, x), w = find(grid.v, v);
  if (h < 0 || w < 0)
    throw DomainError("(" + std::to_string(x) + ", " + std::to_string(v) + ") is not a grid coordinate");
  if (static_cast<Index>(a.size()) != grid.size()) throw ShapeError("input function does not match the grid");
  ad::Tape tape(params);
  FieldEvaluator ev(tape, fields, problem, column(a));
  Eigen::Matrix3Xd p(3, 1);
  p << 0.0, grid.x[static_cast<std::size_t>(h)], grid.v[static_cast<std::size_t>(w)];
  return tape.value(ev.reconstruct_f(p))(0, 0) - a[static_cast<std::size_t>(h * grid.width() + w)];
}

}  // namespace apcon
