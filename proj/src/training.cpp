#include "koopflow/training.hpp"

#include "koopflow/errors.hpp"
#include "koopflow/textio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace koopflow {

void FlowDmdConfig::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite non-negative number");
    if (rank < 1) throw ConfigError("DMD rank must be >= 1");
    if (network.depth < 1) throw ConfigError("flow depth must be >= 1");
    if (training.max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (training.early_stop < 1) throw ConfigError("early_stop must be >= 1");
}

LinearityResult linearity_loss(const FlowNetwork& flow, const Trajectory& traj, int rank) {
    const Matrix g = flow.forward(traj.states);
    LinearityResult res;
    res.model = fit_dmd_rows(g, rank);
    const int steps = traj.steps();
    const Matrix ghat = res.model.predict_rows(steps);
    res.loss = (g.bottomRows(steps) - ghat.bottomRows(steps)).squaredNorm();
    return res;
}

double reconstruction_loss(const FlowNetwork& flow, const Trajectory& traj, const DmdModel& model) {
    const int steps = traj.steps();
    if (model.dim() != traj.dim()) throw ShapeError("reconstruction_loss: model dimension differs from state");
    const Matrix ghat = model.predict_rows(steps);
    const Matrix xhat = flow.inverse(Matrix(ghat.bottomRows(steps)));
    return (traj.states.bottomRows(steps) - xhat).squaredNorm();
}

Matrix stacked_propagators(const DmdModel& model, int steps) {
    const int n = model.dim();
    Matrix out(n, static_cast<Eigen::Index>(steps) * n);
    ComplexVector powk = ComplexVector::Ones(model.rank());
    for (int t = 1; t <= steps; ++t) {
        powk = powk.cwiseProduct(model.eigenvalues);
        const Matrix mt = (model.modes * powk.asDiagonal() * model.modes_pinv).real();
        out.middleCols(static_cast<Eigen::Index>(t - 1) * n, n) = mt.transpose();
    }
    return out;
}

TapeLosses record_flowdmd_losses(Tape& tape, FlowNetwork& flow, Var states, Var g_states, const Matrix& stacked) {
    const Eigen::Index steps = states.rows() - 1;
    const Eigen::Index n = g_states.cols();
    if (stacked.rows() != n || stacked.cols() != steps * n)
        throw ShapeError("record_flowdmd_losses: propagator stack does not match trajectory");
    Var g0 = ad::rows(g_states, 0, 1);
    Var ghat = ad::fold_rows(ad::matmul_const(g0, stacked), steps, n);
    Var lin = ad::sum_squares(ad::sub(ad::rows(g_states, 1, steps), ghat));
    Var xhat = flow.inverse(tape, ghat);
    Var rec = ad::sum_squares(ad::sub(ad::rows(states, 1, steps), xhat));
    return {lin, rec};
}

TapeLosses record_flowdmd_losses_through(Tape& tape, FlowNetwork& flow, Var states, Var g_states, int rank) {
    const Eigen::Index steps = states.rows() - 1;
    const Eigen::Index n = g_states.cols();
    if (rank < 1 || rank > n || rank > steps) throw ConfigError("DMD rank out of range for trajectory");
    Var g0s = ad::rows(g_states, 0, steps);  // X^T
    Var g1s = ad::rows(g_states, 1, steps);  // Y^T
    Var xt = ad::transpose(g0s);
    Var c = ad::matmul(xt, g0s);
    Var u = ad::top_eigenvectors(c, rank);
    Var ut = ad::transpose(u);
    Var s_inv = ad::inverse(ad::matmul(ut, ad::matmul(c, u)));
    Var b = ad::matmul(ad::matmul(ad::transpose(g1s), ad::matmul(g0s, u)), s_inv);
    Var k = ad::matmul(ut, b);
    Var bt = ad::transpose(b);
    Var b_pinv_t = ad::matmul(b, ad::inverse(ad::matmul(bt, b)));  // (B^+)^T
    Var amp = ad::matmul(ad::rows(g_states, 0, 1), b_pinv_t);      // (B^+ g0)^T
    Var ghat = ad::matmul(ad::orbit(amp, ad::transpose(k), steps), bt);
    Var lin = ad::sum_squares(ad::sub(g1s, ghat));
    Var xhat = flow.inverse(tape, ghat);
    Var rec = ad::sum_squares(ad::sub(ad::rows(states, 1, steps), xhat));
    return {lin, rec};
}

DmdGradient parse_dmd_gradient(const std::string& name) {
    if (name == "frozen") return DmdGradient::frozen;
    if (name == "through") return DmdGradient::through;
    throw ConfigError("unknown DMD gradient mode '" + name + "' (expected frozen or through)");
}

std::string to_string(DmdGradient g) { return g == DmdGradient::frozen ? "frozen" : "through"; }

FlowDmdTrainer::FlowDmdTrainer(FlowDmdConfig config, const Dataset& data)
    : config_(std::move(config)), data_(&data), best_val_(std::numeric_limits<double>::infinity()) {
    config_.validate();
    if (data.train.empty()) throw ConfigError("training set is empty");
    if (data.validation.empty()) throw ConfigError("validation set is empty");
    if (config_.network.dim != data.state_dim())
        throw ConfigError("network dimension " + std::to_string(config_.network.dim) + " differs from state dimension " +
                          std::to_string(data.state_dim()));
    flow_ = make_flow(config_.network, config_.seed);
    best_flow_ = flow_;
    adam_ = AdamState(flow_.parameters(), config_.training.adam);
    scheduler_ = PlateauScheduler(config_.training.adam.lr, config_.training.plateau);
}

bool FlowDmdTrainer::finished() const { return stopped_ || epoch_ >= config_.training.max_epochs; }

double FlowDmdTrainer::mean_total_loss(const std::vector<Trajectory>& trajs) const {
    double acc = 0.0;
    for (const auto& tr : trajs) {
        const auto lin = linearity_loss(flow_, tr, config_.rank);
        acc += lin.loss + config_.alpha * reconstruction_loss(flow_, tr, lin.model);
    }
    return trajs.empty() ? 0.0 : acc / static_cast<double>(trajs.size());
}

bool FlowDmdTrainer::run_epoch() {
    if (finished()) return false;
    const int epoch = epoch_ + 1;
    std::vector<std::size_t> order(data_->train.size());
    std::iota(order.begin(), order.end(), 0);
    if (config_.training.shuffle) {
        std::mt19937_64 rng(mix_seed(config_.seed ^ (static_cast<std::uint64_t>(epoch) * 0x9e3779b97f4a7c15ULL)));
        std::shuffle(order.begin(), order.end(), rng);
    }

    adam_.options.lr = scheduler_.lr;
    ParameterList params = flow_.parameters();
    double sum_lin = 0.0, sum_rec = 0.0;
    try {
        for (std::size_t idx : order) {
            const Trajectory& tr = data_->train[idx];
            Tape tape;
            Var xs = tape.constant(tr.states);
            Var gs = flow_.forward(tape, xs);
            const DmdModel model = fit_dmd_rows(gs.value(), config_.rank);
            const TapeLosses losses =
                config_.gradient == DmdGradient::through
                    ? record_flowdmd_losses_through(tape, flow_, xs, gs, config_.rank)
                    : record_flowdmd_losses(tape, flow_, xs, gs, stacked_propagators(model, tr.steps()));
            Var total = ad::add(losses.linear, ad::scale(losses.rec, config_.alpha));
            const double lin = losses.linear.value()(0, 0);
            const double rec = losses.rec.value()(0, 0);
            if (!std::isfinite(lin) || !std::isfinite(rec))
                throw TrainingDivergenceError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)",
                                              epoch);
            sum_lin += lin;
            sum_rec += rec;
            zero_grad(params);
            tape.backward(total);
            adam_step(adam_, params);
        }
    } catch (const TrainingDivergenceError&) {
        throw;
    } catch (const NumericError& e) {
        throw TrainingDivergenceError("training failed at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }

    double val = 0.0;
    try {
        val = mean_total_loss(data_->validation);
    } catch (const NumericError& e) {
        throw TrainingDivergenceError("validation failed at epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
    }
    if (!std::isfinite(val))
        throw TrainingDivergenceError("validation loss is non-finite at epoch " + std::to_string(epoch), epoch);

    const double n = static_cast<double>(order.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_linear = sum_lin / n;
    rec.l_rec = sum_rec / n;
    rec.total = rec.l_linear + config_.alpha * rec.l_rec;
    rec.val_total = val;
    rec.lr = scheduler_.lr;
    history_.push_back(rec);

    if (val < best_val_) {
        best_val_ = val;
        best_epoch_ = epoch;
        best_flow_ = flow_;
        since_best_ = 0;
    } else {
        ++since_best_;
    }
    scheduler_.step(val);
    epoch_ = epoch;
    if (since_best_ >= config_.training.early_stop) stopped_ = true;
    if (on_epoch) on_epoch(rec);
    return !finished();
}

void FlowDmdTrainer::run(int max_more) {
    for (int k = 0; (max_more < 0 || k < max_more) && !finished(); ++k) run_epoch();
}

TrainedModel FlowDmdTrainer::result() const {
    TrainedModel out;
    out.flow = best_flow_;
    out.history = history_;
    out.best_epoch = best_epoch_;
    out.best_val = best_val_;
    for (const auto& tr : data_->train) out.train_models.push_back(fit_dmd_rows(best_flow_.forward(tr.states), config_.rank));
    return out;
}

namespace {

constexpr const char* kTrainerMagic = "koopflow-trainer";

}  // namespace

void FlowDmdTrainer::save_state(std::ostream& out) const {
    using textio::format_double;
    out << kTrainerMagic << " 1\n";
    out << "epoch " << epoch_ << " best_epoch " << best_epoch_ << " since_best " << since_best_ << " stopped "
        << (stopped_ ? 1 : 0) << '\n';
    out << "best_val " << format_double(best_val_) << '\n';
    out << "scheduler " << format_double(scheduler_.lr) << ' ' << format_double(scheduler_.best) << ' '
        << scheduler_.bad_epochs << '\n';
    out << "adam " << adam_.step << ' ' << adam_.m.size() << '\n';
    for (std::size_t i = 0; i < adam_.m.size(); ++i) {
        out << "moment " << i << ' ' << adam_.m[i].rows() << ' ' << adam_.m[i].cols() << '\n';
        textio::write_matrix(out, adam_.m[i]);
        textio::write_matrix(out, adam_.v[i]);
    }
    out << "history " << history_.size() << '\n';
    for (const auto& h : history_)
        out << h.epoch << ' ' << format_double(h.l_linear) << ' ' << format_double(h.l_rec) << ' '
            << format_double(h.total) << ' ' << format_double(h.val_total) << ' ' << format_double(h.lr) << '\n';
    out << "current\n";
    save_flow(flow_, out);
    out << "best\n";
    save_flow(best_flow_, out);
    out << "end-trainer\n";
    if (!out) throw IoError("failed writing trainer state");
}

void FlowDmdTrainer::load_state(std::istream& in) {
    using namespace textio;
    if (next_token(in, "trainer header") != kTrainerMagic) throw IoError("not a trainer checkpoint");
    if (parse_int(next_token(in, "version")) != 1) throw IoError("unsupported checkpoint version");
    expect_token(in, "epoch");
    const int epoch = static_cast<int>(parse_int(next_token(in, "epoch")));
    expect_token(in, "best_epoch");
    const int best_epoch = static_cast<int>(parse_int(next_token(in, "best_epoch")));
    expect_token(in, "since_best");
    const int since_best = static_cast<int>(parse_int(next_token(in, "since_best")));
    expect_token(in, "stopped");
    const bool stopped = parse_int(next_token(in, "stopped")) != 0;
    expect_token(in, "best_val");
    const double best_val = parse_double(next_token(in, "best_val"));
    expect_token(in, "scheduler");
    PlateauScheduler sched = scheduler_;
    sched.lr = parse_double(next_token(in, "lr"));
    sched.best = parse_double(next_token(in, "best"));
    sched.bad_epochs = static_cast<int>(parse_int(next_token(in, "bad epochs")));
    expect_token(in, "adam");
    AdamState adam = adam_;
    adam.step = parse_int(next_token(in, "adam step"));
    const long long nmom = parse_int(next_token(in, "moment count"));
    if (nmom != static_cast<long long>(adam.m.size())) throw IoError("checkpoint does not match the configured network");
    for (long long i = 0; i < nmom; ++i) {
        expect_token(in, "moment");
        if (parse_int(next_token(in, "moment index")) != i) throw IoError("moment index out of order");
        const long long r = parse_int(next_token(in, "rows"));
        const long long c = parse_int(next_token(in, "cols"));
        if (r != adam.m[i].rows() || c != adam.m[i].cols()) throw IoError("checkpoint moment shape mismatch");
        adam.m[i] = read_matrix(in, r, c);
        adam.v[i] = read_matrix(in, r, c);
    }
    expect_token(in, "history");
    const long long nh = parse_int(next_token(in, "history length"));
    if (nh < 0 || nh > 100000000) throw IoError("corrupt history length");
    std::vector<EpochRecord> history;
    for (long long k = 0; k < nh; ++k) {
        EpochRecord h;
        h.epoch = static_cast<int>(parse_int(next_token(in, "epoch")));
        h.l_linear = parse_double(next_token(in, "l_linear"));
        h.l_rec = parse_double(next_token(in, "l_rec"));
        h.total = parse_double(next_token(in, "total"));
        h.val_total = parse_double(next_token(in, "val_total"));
        h.lr = parse_double(next_token(in, "lr"));
        history.push_back(h);
    }
    expect_token(in, "current");
    FlowNetwork current = load_flow(in);
    expect_token(in, "best");
    FlowNetwork best = load_flow(in);
    expect_token(in, "end-trainer");
    if (current.parameter_count() != flow_.parameter_count() || current.depth() != flow_.depth() ||
        current.dim() != flow_.dim())
        throw IoError("checkpoint network does not match the configured network");

    flow_ = std::move(current);
    best_flow_ = std::move(best);
    adam_ = std::move(adam);
    adam_.options = config_.training.adam;
    scheduler_ = sched;
    history_ = std::move(history);
    epoch_ = epoch;
    best_epoch_ = best_epoch;
    since_best_ = since_best;
    stopped_ = stopped;
    best_val_ = best_val;
}

TrainedModel train_flowdmd(const FlowDmdConfig& config, const Dataset& data) {
    FlowDmdTrainer trainer(config, data);
    trainer.run();
    return trainer.result();
}

Matrix reconstruct_flowdmd(const FlowNetwork& flow, const Matrix& states, int rank) {
    const Matrix g = flow.forward(states);
    const DmdModel model = fit_dmd_rows(g, rank);
    return flow.inverse(model.predict_rows(static_cast<int>(states.rows()) - 1));
}

Matrix reconstruct_exact_dmd(const Matrix& states, int rank) {
    return fit_dmd_rows(states, rank).predict_rows(static_cast<int>(states.rows()) - 1);
}

std::vector<ErrorReport> evaluate_flowdmd(const FlowNetwork& flow, const std::vector<Trajectory>& trajs, int rank) {
    std::vector<ErrorReport> out;
    for (const auto& tr : trajs)
        out.push_back(make_error_report(reconstruct_flowdmd(flow, tr.states, rank), tr.states, tr.sample_id, "flowdmd"));
    return out;
}

std::vector<ErrorReport> evaluate_exact_dmd(const std::vector<Trajectory>& trajs, int rank) {
    std::vector<ErrorReport> out;
    for (const auto& tr : trajs)
        out.push_back(make_error_report(reconstruct_exact_dmd(tr.states, rank), tr.states, tr.sample_id, "exact_dmd"));
    return out;
}

std::vector<Matrix> exact_dmd_baseline(const Dataset& data, int rank) {
    std::vector<Matrix> out;
    for (const auto& tr : data.test) out.push_back(reconstruct_exact_dmd(tr.states, rank));
    return out;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    using textio::format_double;
    out << "epoch,l_linear,l_rec,total,val_total,lr\n";
    for (const auto& h : history)
        out << h.epoch << ',' << format_double(h.l_linear) << ',' << format_double(h.l_rec) << ','
            << format_double(h.total) << ',' << format_double(h.val_total) << ',' << format_double(h.lr) << '\n';
}

// ---------------------------------------------------------------------------
// Autoencoder baseline

Matrix ood_sin_curve(int n) {
    constexpr double kPi = 3.14159265358979323846;
    Matrix out(n, 2);
    for (int i = 0; i < n; ++i) {
        const double x = -2.0 * kPi + 4.0 * kPi * i / std::max(1, n - 1);
        out(i, 0) = x;
        out(i, 1) = 2.0 * std::sin(x);
    }
    return out;
}

Matrix ood_s_curve(int n, std::uint64_t seed) {
    constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 rng(mix_seed(seed));
    std::uniform_real_distribution<double> u(-1.5 * kPi, 1.5 * kPi);
    Matrix out(n, 2);
    for (int i = 0; i < n; ++i) {
        const double t = u(rng);
        out(i, 0) = 2.0 * std::sin(t);
        out(i, 1) = 2.0 * (t < 0 ? -1.0 : 1.0) * (std::cos(t) - 1.0);
    }
    return out;
}

Matrix ood_normal(int n, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> nrm(0.0, 1.0);
    Matrix out(n, dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dim; ++j) out(i, j) = nrm(rng);
    return out;
}

double ae_mean_error(const Fnn& encoder, const Fnn& decoder, const Matrix& x) {
    const Matrix rec = decoder.forward_batch(encoder.forward_batch(x));
    return (rec - x).rowwise().norm().mean();
}

namespace {

Matrix pool_states(const std::vector<Trajectory>& trajs) {
    Eigen::Index rows = 0;
    for (const auto& tr : trajs) rows += tr.states.rows();
    if (trajs.empty()) return Matrix();
    Matrix out(rows, trajs.front().dim());
    Eigen::Index at = 0;
    for (const auto& tr : trajs) {
        out.middleRows(at, tr.states.rows()) = tr.states;
        at += tr.states.rows();
    }
    return out;
}

}  // namespace

AeResult train_ae_baseline(const AeConfig& config, const Dataset& data) {
    if (config.encoder.back() != config.decoder.front())
        throw ConfigError("encoder output width must equal decoder input width");
    if (config.encoder.front() != data.state_dim() || config.decoder.back() != data.state_dim())
        throw ConfigError("autoencoder widths do not match the state dimension");
    if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");

    AeResult res;
    res.encoder = xavier_init(config.encoder, mix_seed(config.seed), config.activation);
    res.decoder = xavier_init(config.decoder, mix_seed(config.seed + 1), config.activation);
    const Matrix train = pool_states(data.train);
    const Matrix val = pool_states(data.validation.empty() ? data.train : data.validation);

    ParameterList params = res.encoder.parameters();
    for (Parameter* p : res.decoder.parameters()) params.push_back(p);
    AdamState adam(params, config.adam);
    PlateauScheduler sched(config.adam.lr, config.plateau);

    Fnn best_enc = res.encoder, best_dec = res.decoder;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.rows()));
    std::iota(order.begin(), order.end(), 0);
    const Eigen::Index dim = train.cols();

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::mt19937_64 rng(mix_seed(config.seed ^ (static_cast<std::uint64_t>(epoch) << 20)));
        std::shuffle(order.begin(), order.end(), rng);
        adam.options.lr = sched.lr;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            Matrix batch(static_cast<Eigen::Index>(stop - start), dim);
            for (std::size_t k = start; k < stop; ++k) batch.row(static_cast<Eigen::Index>(k - start)) = train.row(order[k]);
            Tape tape;
            Var x = tape.constant(batch);
            Var rec = res.decoder.forward(tape, res.encoder.forward(tape, x));
            Var loss = ad::scale(ad::sum_squares(ad::sub(rec, x)), 1.0 / static_cast<double>(batch.size()));
            if (!std::isfinite(loss.value()(0, 0)))
                throw TrainingDivergenceError("autoencoder training diverged at epoch " + std::to_string(epoch), epoch);
            zero_grad(params);
            tape.backward(loss);
            adam_step(adam, params);
        }
        const Matrix vrec = res.decoder.forward_batch(res.encoder.forward_batch(val));
        const double vloss = (vrec - val).squaredNorm() / static_cast<double>(val.size());
        if (!std::isfinite(vloss))
            throw TrainingDivergenceError("autoencoder validation loss non-finite at epoch " + std::to_string(epoch), epoch);
        res.val_history.push_back(vloss);
        if (vloss < best_val) {
            best_val = vloss;
            best_enc = res.encoder;
            best_dec = res.decoder;
            since_best = 0;
        } else if (++since_best >= config.early_stop) {
            break;
        }
        sched.step(vloss);
    }
    res.encoder = std::move(best_enc);
    res.decoder = std::move(best_dec);

    const Matrix held_out = pool_states(data.test.empty() ? data.validation : data.test);
    AeReport& rep = res.report;
    rep.train_error = ae_mean_error(res.encoder, res.decoder, train);
    rep.in_distribution_error = ae_mean_error(res.encoder, res.decoder, held_out);
    if (dim == 2) {
        rep.sin_error = ae_mean_error(res.encoder, res.decoder, ood_sin_curve(config.probe_points));
        rep.s_curve_error = ae_mean_error(res.encoder, res.decoder, ood_s_curve(config.probe_points, config.seed + 11));
    }
    rep.normal_error =
        ae_mean_error(res.encoder, res.decoder, ood_normal(config.probe_points, static_cast<int>(dim), config.seed + 13));
    const Matrix z = ood_normal(config.probe_points, static_cast<int>(res.decoder.input_dim()), config.seed + 17);
    rep.latent_cycle_error = (res.encoder.forward_batch(res.decoder.forward_batch(z)) - z).rowwise().norm().mean();
    return res;
}

Matrix reconstruct_ae_dmd(const Fnn& encoder, const Fnn& decoder, const Matrix& states, int rank) {
    const Matrix latent = encoder.forward_batch(states);
    const DmdModel model = fit_dmd_rows(latent, rank);
    return decoder.forward_batch(model.predict_rows(static_cast<int>(states.rows()) - 1));
}

}  // namespace koopflow
