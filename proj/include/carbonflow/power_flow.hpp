#pragma once

#include "carbonflow/grid.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carbonflow {

/// Physical flows of one timestep. Line quantities are signed on the declared
/// from->to orientation; the sending end is whichever end the power leaves.
struct FlowSolution {
    std::vector<double> sending_mw;
    std::vector<double> receiving_mw;  // |receiving| = |sending| - loss
    std::vector<double> loss_mw;
    std::vector<double> gen_mw;
    std::vector<double> load_mw;
    std::vector<double> storage_mw;  // + charge, - discharge
    std::vector<ImportInjection> imports;  // per bus
    std::vector<double> adjustment_mw;     // per bus
    std::vector<double> angle_rad;         // empty when supplied externally

    /// Net injection at each bus from everything except lines.
    std::vector<double> bus_injection(const Network& net) const {
        std::vector<double> inj(net.buses().size(), 0.0);
        for (std::size_t k = 0; k < gen_mw.size(); ++k) inj[net.bus_at(net.generators()[k].bus)] += gen_mw[k];
        for (std::size_t h = 0; h < load_mw.size(); ++h) inj[net.bus_at(net.loads()[h].bus)] -= load_mw[h];
        for (std::size_t s = 0; s < storage_mw.size(); ++s)
            inj[net.bus_at(net.storage_units()[s].bus)] -= storage_mw[s];
        for (std::size_t b = 0; b < imports.size() && b < inj.size(); ++b) inj[b] += imports[b].mw;
        for (std::size_t b = 0; b < adjustment_mw.size() && b < inj.size(); ++b) inj[b] += adjustment_mw[b];
        return inj;
    }

    /// Injections + line inflows (receiving end) - line outflows (sending end), per bus.
    std::vector<double> balance_residual(const Network& net) const {
        auto res = bus_injection(net);
        for (std::size_t l = 0; l < sending_mw.size(); ++l) {
            auto f = net.from_index(l);
            auto t = net.to_index(l);
            if (sending_mw[l] >= 0.0) {
                res[f] -= sending_mw[l];
                res[t] += receiving_mw[l];
            } else {
                res[t] += sending_mw[l];
                res[f] -= receiving_mw[l];
            }
        }
        return res;
    }

    double total_loss() const {
        double sum = 0.0;
        for (double v : loss_mw) sum += v;
        return sum;
    }
};

struct PowerFlowOptions {
    bool enforce_limits = false;
    double balance_tol_mw = 1e-6;
};

/// Lowest-id generator at the slack bus, if any.
inline std::optional<std::size_t> slack_generator(const Network& net) {
    auto slack = net.bus_index(net.slack_bus());
    if (!slack) return std::nullopt;
    std::optional<std::size_t> best;
    for (auto k : net.generators_at(*slack))
        if (!best || net.generators()[k].id < net.generators()[*best].id) best = k;
    return best;
}

/// Factorised reduced susceptance matrix (slack row/column removed).
class DcModel {
public:
    static constexpr double kResidualTolerance = 1e-9;  // per unit
    static constexpr double kFlowNoise = 1e-12;

    explicit DcModel(const Network& net) : net_(&net), slack_(net.slack_index()) {
        const std::size_t n = net.buses().size();
        reduced_.assign(n, -1);
        int next = 0;
        for (std::size_t b = 0; b < n; ++b)
            if (b != slack_) reduced_[b] = next++;
        dim_ = next;
        if (dim_ == 0) return;

        std::vector<Eigen::Triplet<double>> entries;
        for (std::size_t l = 0; l < net.lines().size(); ++l) {
            const double y = 1.0 / net.lines()[l].reactance;
            const int f = reduced_[net.from_index(l)];
            const int t = reduced_[net.to_index(l)];
            if (f >= 0) entries.emplace_back(f, f, y);
            if (t >= 0) entries.emplace_back(t, t, y);
            if (f >= 0 && t >= 0) {
                entries.emplace_back(f, t, -y);
                entries.emplace_back(t, f, -y);
            }
        }
        matrix_.resize(dim_, dim_);
        matrix_.setFromTriplets(entries.begin(), entries.end());
        matrix_.makeCompressed();
        lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        lu_->setPivotThreshold(1.0);
        lu_->compute(matrix_);
        if (lu_->info() != Eigen::Success)
            throw Error(ErrorKind::SingularSystem, "reduced susceptance matrix is singular");
    }

    /// Bus angles (radians, slack = 0) for nodal injections in MW; the slack entry is ignored.
    std::vector<double> angles(std::span<const double> injection_mw) const {
        const std::size_t n = reduced_.size();
        std::vector<double> theta(n, 0.0);
        if (dim_ == 0) return theta;
        Eigen::VectorXd rhs(dim_);
        for (std::size_t b = 0; b < n; ++b)
            if (reduced_[b] >= 0) rhs[reduced_[b]] = injection_mw[b] / net_->base_mva();
        Eigen::VectorXd x = lu_->solve(rhs);
        const double residual = (matrix_ * x - rhs).lpNorm<Eigen::Infinity>();
        if (lu_->info() != Eigen::Success || !std::isfinite(residual) || residual > kResidualTolerance)
            throw Error(ErrorKind::SingularSystem, "DC power flow residual " + std::to_string(residual));
        for (std::size_t b = 0; b < n; ++b)
            if (reduced_[b] >= 0) theta[b] = x[reduced_[b]];
        return theta;
    }

    /// Flows in MW; round-off level values (relative 1e-12 of the largest flow) are set to exactly zero.
    std::vector<double> line_flows(std::span<const double> theta) const {
        const auto& lines = net_->lines();
        std::vector<double> flow(lines.size());
        double largest = 0.0;
        for (std::size_t l = 0; l < lines.size(); ++l) {
            flow[l] = net_->base_mva() * (theta[net_->from_index(l)] - theta[net_->to_index(l)]) /
                      lines[l].reactance;
            largest = std::max(largest, std::abs(flow[l]));
        }
        const double noise = kFlowNoise * std::max(1.0, largest);
        for (auto& f : flow)
            if (std::abs(f) <= noise) f = 0.0;
        return flow;
    }

    std::size_t slack() const { return slack_; }

private:
    const Network* net_;
    std::size_t slack_;
    std::vector<int> reduced_;
    int dim_ = 0;
    Eigen::SparseMatrix<double> matrix_;
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

namespace detail {

inline void absorb_at_slack(const Network& net, std::vector<double>& gen, double residual,
                            const PowerFlowOptions& options) {
    auto k = slack_generator(net);
    if (!k) {
        if (std::abs(residual) > options.balance_tol_mw)
            throw Error(ErrorKind::BalanceInfeasible,
                        "imbalance of " + std::to_string(residual) + " MW and no generator at slack bus");
        return;
    }
    gen[*k] -= residual;
    const auto& g = net.generators()[*k];
    if (options.enforce_limits && (gen[*k] < g.p_min - options.balance_tol_mw ||
                                   gen[*k] > g.p_max + options.balance_tol_mw))
        throw Error(ErrorKind::BalanceInfeasible,
                    "slack generator " + g.id + " pushed to " + std::to_string(gen[*k]) + " MW");
}

}  // namespace detail

/// Lossless DC power flow for a snapshot whose generation is given; the slack
/// generator absorbs any residual imbalance.
inline FlowSolution solve_dc_power_flow(const Network& net, const Snapshot& snap,
                                        const PowerFlowOptions& options = {}) {
    require_valid(net);
    require_valid(net, snap);

    FlowSolution sol;
    sol.gen_mw = generation_vector(net, snap);
    sol.load_mw = load_vector(net, snap);
    sol.storage_mw = storage_vector(net, snap);
    sol.imports = import_vector(net, snap);
    sol.adjustment_mw = adjustment_vector(net, snap);

    auto inj = sol.bus_injection(net);
    double residual = 0.0;
    for (double v : inj) residual += v;
    detail::absorb_at_slack(net, sol.gen_mw, residual, options);
    inj = sol.bus_injection(net);

    DcModel model(net);
    sol.angle_rad = model.angles(inj);
    sol.sending_mw = model.line_flows(sol.angle_rad);
    sol.receiving_mw = sol.sending_mw;
    sol.loss_mw.assign(net.lines().size(), 0.0);
    return sol;
}

/// Applies the sending-end proportional loss model. Each loss is withdrawn at
/// the receiving bus and the flows are re-solved until the losses settle, so
/// nodal balance holds everywhere and the slack generator carries the total loss.
inline FlowSolution apply_losses(const FlowSolution& lossless, const Network& net,
                                 const PowerFlowOptions& options = {}) {
    const auto& lines = net.lines();
    bool lossy = false;
    for (const auto& line : lines) lossy = lossy || line.loss_fraction > 0.0;
    if (!lossy) return lossless;

    DcModel model(net);
    const auto base_inj = lossless.bus_injection(net);
    std::vector<double> flow = lossless.sending_mw;
    std::vector<double> loss(lines.size(), 0.0);
    std::vector<double> theta = lossless.angle_rad;

    constexpr int kMaxIterations = 500;
    double scale = 1.0;
    for (double f : flow) scale = std::max(scale, std::abs(f));
    bool converged = false;
    for (int iter = 0; iter < kMaxIterations && !converged; ++iter) {
        auto inj = base_inj;
        for (std::size_t l = 0; l < lines.size(); ++l) {
            loss[l] = lines[l].loss_fraction * std::abs(flow[l]);
            if (flow[l] == 0.0) loss[l] = 0.0;
            else inj[flow[l] > 0.0 ? net.to_index(l) : net.from_index(l)] -= loss[l];
        }
        theta = model.angles(inj);
        auto next = model.line_flows(theta);
        double change = 0.0;
        bool flipped = false;
        for (std::size_t l = 0; l < lines.size(); ++l) {
            change = std::max(change, std::abs(next[l] - flow[l]));
            flipped = flipped || (flow[l] != 0.0 && next[l] != 0.0 && (flow[l] > 0.0) != (next[l] > 0.0));
        }
        // Losses used in this solve are kept, so balance is exact for the returned flows.
        if (flipped) {
            flow = std::move(next);
            continue;
        }
        flow = std::move(next);
        converged = change <= 1e-11 * scale;
    }
    if (!converged)
        throw Error(ErrorKind::BalanceInfeasible, "loss allocation did not converge");
    for (std::size_t l = 0; l < lines.size(); ++l)
        if (flow[l] == 0.0) loss[l] = 0.0;

    FlowSolution out = lossless;
    out.angle_rad = std::move(theta);
    out.sending_mw = flow;
    out.loss_mw = loss;
    out.receiving_mw.resize(lines.size());
    for (std::size_t l = 0; l < lines.size(); ++l)
        out.receiving_mw[l] = flow[l] >= 0.0 ? flow[l] - loss[l] : flow[l] + loss[l];

    // Whatever the re-solve left unbalanced sits at the slack bus.
    auto residual = out.balance_residual(net);
    detail::absorb_at_slack(net, out.gen_mw, residual[model.slack()], options);
    return out;
}

/// Line-flow change (MW) per MW injected at each bus and withdrawn at the slack.
struct PtdfMatrix {
    Eigen::MatrixXd factors;  // lines x buses

    double operator()(std::size_t line, std::size_t bus) const {
        return factors(static_cast<Eigen::Index>(line), static_cast<Eigen::Index>(bus));
    }

    std::vector<double> predict(std::span<const double> injection_mw) const {
        Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(injection_mw.data(),
                                                               static_cast<Eigen::Index>(injection_mw.size()));
        Eigen::VectorXd dp = factors * u;
        return {dp.data(), dp.data() + dp.size()};
    }
};

inline PtdfMatrix compute_ptdf(const Network& net) {
    require_valid(net);
    DcModel model(net);
    const std::size_t n = net.buses().size();
    PtdfMatrix ptdf;
    ptdf.factors = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(net.lines().size()),
                                         static_cast<Eigen::Index>(n));
    std::vector<double> unit(n, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
        if (b == model.slack()) continue;
        unit[b] = 1.0;
        auto flows = model.line_flows(model.angles(unit));
        unit[b] = 0.0;
        for (std::size_t l = 0; l < flows.size(); ++l)
            ptdf.factors(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(b)) = flows[l];
    }
    return ptdf;
}

/// Gate for externally supplied flows: nodal balance and the loss identity.
inline ValidationReport check_flow_consistency(const Network& net, const FlowSolution& flow, double tol,
                                               bool flag_capacity = false) {
    ValidationReport report;
    const auto nl = net.lines().size();
    if (flow.sending_mw.size() != nl || flow.receiving_mw.size() != nl || flow.loss_mw.size() != nl ||
        flow.gen_mw.size() != net.generators().size() || flow.load_mw.size() != net.loads().size() ||
        flow.storage_mw.size() != net.storage_units().size() ||
        (!flow.imports.empty() && flow.imports.size() != net.buses().size()) ||
        (!flow.adjustment_mw.empty() && flow.adjustment_mw.size() != net.buses().size())) {
        report.add("", "flow solution dimensions do not match the network");
        return report;
    }
    auto residual = flow.balance_residual(net);
    for (std::size_t b = 0; b < residual.size(); ++b)
        if (!(std::abs(residual[b]) <= tol))
            report.add(net.buses()[b].id, "nodal balance residual " + std::to_string(residual[b]) + " MW");
    for (std::size_t l = 0; l < nl; ++l) {
        const double s = flow.sending_mw[l];
        const double r = flow.receiving_mw[l];
        const double loss = flow.loss_mw[l];
        const bool sign_ok = s == 0.0 || r == 0.0 || (s > 0.0) == (r > 0.0);
        if (!(loss >= -tol) || !sign_ok || !(std::abs(std::abs(r) - (std::abs(s) - loss)) <= tol))
            report.add(net.lines()[l].id, "receiving-end flow differs from sending-end flow minus loss");
        if (flag_capacity && std::abs(s) > net.lines()[l].capacity_mw + tol)
            report.warn(net.lines()[l].id, "flow exceeds capacity");
    }
    return report;
}

}  // namespace carbonflow
