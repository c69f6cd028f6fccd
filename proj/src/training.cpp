#include "icm/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "icm/archive.hpp"
#include "icm/autograd.hpp"
#include "icm/image_io.hpp"
#include "icm/kernels.hpp"
#include "icm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace icm {

// --------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::toy()
{
    TrainConfig c;
    c.profile = "toy";
    c.learning_rate = 2e-3;
    c.batch_size = 2;
    c.crop_size = 64;
    c.iterations = 200;
    c.erosion_radius = 2;
    c.checkpoint_every = 100;
    return c;
}

void TrainConfig::validate() const
{
    if (profile != "standard" && profile != "toy")
        throw ConfigError("unknown profile '" + profile + "'");
    if (!(learning_rate >= 0) || !(weight_decay >= 0))
        throw ConfigError("learning rate and weight decay must be nonnegative");
    if (batch_size < 1 || crop_size < 1 || iterations < 0 || checkpoint_every < 1)
        throw ConfigError("batch, crop and checkpoint interval must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0))
        throw ConfigError("adam coefficients out of range");
    if (loss_weights.l1 < 0 || loss_weights.laplacian < 0 || loss_weights.gradient < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (erosion_radius < 0)
        throw ConfigError("erosion radius must be nonnegative");
}

json TrainConfig::to_json() const
{
    return {{"profile", profile},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"crop_size", crop_size},
            {"iterations", iterations},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"loss_weights",
             {{"l1", loss_weights.l1}, {"laplacian", loss_weights.laplacian}, {"gradient", loss_weights.gradient}}},
            {"erosion_radius", erosion_radius},
            {"seed", seed},
            {"head_seed", head_seed},
            {"checkpoint_every", checkpoint_every},
            {"guidance",
             {{"use_inter", guidance.use_inter},
              {"use_intra", guidance.use_intra},
              {"multi_scale", guidance.multi_scale}}}};
}

TrainConfig TrainConfig::from_json(const json& j)
{
    const std::string profile = j.value("profile", std::string("standard"));
    TrainConfig c = profile == "toy" ? toy() : TrainConfig{};
    c.profile = profile;
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.crop_size = j.value("crop_size", c.crop_size);
        c.iterations = j.value("iterations", c.iterations);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        if (j.contains("loss_weights")) {
            const auto& w = j["loss_weights"];
            c.loss_weights.l1 = w.value("l1", c.loss_weights.l1);
            c.loss_weights.laplacian = w.value("laplacian", c.loss_weights.laplacian);
            c.loss_weights.gradient = w.value("gradient", c.loss_weights.gradient);
        }
        c.erosion_radius = j.value("erosion_radius", c.erosion_radius);
        c.seed = j.value("seed", c.seed);
        c.head_seed = j.value("head_seed", c.head_seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        if (j.contains("guidance")) {
            const auto& g = j["guidance"];
            c.guidance.use_inter = g.value("use_inter", true);
            c.guidance.use_intra = g.value("use_intra", true);
            c.guidance.multi_scale = g.value("multi_scale", true);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
    }
    c.validate();
    return c;
}

HeadConfig head_config_for(const std::string& profile, const Backend& backend)
{
    const auto dims = backend.feature_dims();
    HeadConfig c = profile == "toy" ? HeadConfig::toy() : HeadConfig::standard();
    if (dims.size() != c.feature_dims.size())
        throw ConfigError("backend '" + backend.name() + "' has " + std::to_string(dims.size()) +
                          " feature scales; the head expects " + std::to_string(c.feature_dims.size()));
    c.feature_dims = dims;
    return c;
}

// --------------------------------------------------------------------------
// Sampling

std::string SamplePair::id() const
{
    return group + ":" + std::to_string(reference_member) + "->" + std::to_string(target_member);
}

ImagePlane random_crop(const ImagePlane& image, int crop, int top, int left)
{
    const int H = image.height(), W = image.width(), C = image.channels();
    std::vector<double> out(static_cast<std::size_t>(crop) * crop * C);
    for (int y = 0; y < crop; ++y) {
        const int sy = ad::pad_index(y + top, H, ad::Padding::reflect);
        for (int x = 0; x < crop; ++x) {
            const int sx = ad::pad_index(x + left, W, ad::Padding::reflect);
            for (int c = 0; c < C; ++c)
                out[(static_cast<std::size_t>(y) * crop + x) * C + c] = image.at(sy, sx, c);
        }
    }
    return ImagePlane(crop, crop, C, std::move(out));
}

namespace {

std::pair<int, int> crop_offset(const ImagePlane& image, int crop, std::mt19937_64& rng)
{
    auto draw = [&](int n) {
        if (n <= crop)
            return 0;
        std::uniform_int_distribution<int> d(0, n - crop);
        return d(rng);
    };
    const int top = draw(image.height());
    const int left = draw(image.width());
    return {top, left};
}

} // namespace

SamplePair sample_pair(const ImageSource& source, const std::vector<ContextGroup>& groups, int crop,
                       std::mt19937_64& rng, std::vector<std::string>* warnings)
{
    std::vector<const ContextGroup*> usable;
    std::size_t total = 0;
    for (const auto& g : groups) {
        if (g.members.empty()) {
            if (warnings)
                warnings->push_back("group '" + g.id + "' is empty; skipped");
            continue;
        }
        usable.push_back(&g);
        total += g.members.size();
    }
    if (usable.empty())
        throw ConfigError("no nonempty groups to sample from");

    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    std::size_t u = pick(rng);
    const ContextGroup* g = usable.front();
    for (const auto* cand : usable) {
        if (u < cand->members.size()) {
            g = cand;
            break;
        }
        u -= cand->members.size();
    }
    std::uniform_int_distribution<int> member(0, static_cast<int>(g->members.size()) - 1);
    SamplePair s;
    s.group = g->id;
    s.kind = g->kind;
    s.reference_member = member(rng);
    s.target_member = member(rng);

    auto labelled = [&](int m) {
        auto l = source.label(*g, m);
        if (!l)
            throw ConfigError("training member " + std::to_string(m) + " of group '" + g->id + "' has no label");
        return std::move(*l);
    };

    const ImagePlane ref = source.image(*g, s.reference_member);
    const ImagePlane ref_label = labelled(s.reference_member);
    const auto [rt, rl] = crop_offset(ref, crop, rng);
    s.reference = random_crop(ref, crop, rt, rl);
    s.reference_roi = binarize(random_crop(ref_label, crop, rt, rl), 0.5);

    const ImagePlane tgt = source.image(*g, s.target_member);
    const ImagePlane tgt_label = labelled(s.target_member);
    const auto [tt, tl] = crop_offset(tgt, crop, rng);
    s.target = random_crop(tgt, crop, tt, tl);
    s.target_label = random_crop(tgt_label, crop, tt, tl);
    if (s.kind == GroupKind::segmentation)
        s.target_label = binarize(s.target_label, 0.5);
    return s;
}

// --------------------------------------------------------------------------
// Optimization

std::map<std::string, double> LossRecord::as_map() const
{
    return {{"l1", l1}, {"laplacian", laplacian}, {"gradient", gradient}, {"segmentation", segmentation},
            {"total", total}};
}

void adamw_update(HeadParameters& params, AdamState& state, const std::map<std::string, Tensor>& grads,
                  const TrainConfig& config)
{
    ++state.step;
    const double b1 = config.beta1, b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double lr = config.learning_rate;
    for (auto& [name, p] : params.tensors) {
        const auto git = grads.find(name);
        auto& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
        auto& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = git == grads.end() ? 0.0 : git->second[i];
            m[i] = b1 * m[i] + (1 - b1) * g;
            v[i] = b2 * v[i] + (1 - b2) * g * g;
            p[i] *= 1.0 - lr * config.weight_decay;
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
    }
}

bool accumulate_sample(const SamplePair& sample, const HeadParameters& params, const Backend& backend,
                       const TrainConfig& config, std::map<std::string, Tensor>& grads, LossRecord& record)
{
    const int R = backend.resolution();
    const FeatureBundle ref = backend.extract(sample.reference);
    const FeatureMap& inter = ref.inter();
    const Tensor grid = roi_to_grid(sample.reference_roi, ref.frame, inter.height(), inter.width());
    InContextQuery query;
    try {
        query = build_query_from_grid(ref, grid);
    } catch (const EmptyPromptError&) {
        record.degenerate.push_back(sample.id());
        return false;
    }

    const FeatureBundle tgt = backend.extract(sample.target);
    const GuidanceSet guidance = compute_guidance(query, tgt, config.guidance);
    const HeadInputs inputs = make_head_inputs(prepare_input(sample.target, R), tgt, guidance);

    // Labels live at crop resolution; the head predicts on the backend square.
    // Crops are square, so the backend frame only rescales them.
    Tensor gt = to_tensor(sample.target_label);
    if (gt.height() != R || gt.width() != R)
        gt = kernels::resize_bilinear(gt, R, R);

    ad::Graph graph;
    const HeadGraph head = build_head(graph, inputs, params, true);
    ad::Var loss;
    if (sample.kind == GroupKind::matting) {
        MattingLossValue parts;
        loss = matting_loss(graph, head.alpha, gt, config.loss_weights, &parts);
        record.l1 += parts.l1;
        record.laplacian += parts.laplacian;
        record.gradient += parts.gradient;
    } else {
        const ImagePlane mask = binarize(to_plane(gt), 0.5);
        const auto seg = segmentation_loss(graph, head.alpha, mask, config.erosion_radius);
        if (!seg) {
            record.degenerate.push_back(sample.id());
            return false;
        }
        loss = *seg;
        record.segmentation += graph.value(loss)[0];
    }
    const double value = graph.value(loss)[0];
    record.total += value;
    if (!std::isfinite(value))
        throw NonFiniteLossError("non-finite loss on sample " + sample.id(), {sample.id()});

    graph.backward(loss);
    for (const auto& [name, var] : head.params) {
        const Tensor g = graph.grad(var);
        auto [it, fresh] = grads.try_emplace(name, g);
        if (!fresh)
            for (std::size_t i = 0; i < g.size(); ++i)
                it->second[i] += g[i];
    }
    return true;
}

LossRecord train_step(const std::vector<SamplePair>& batch, HeadParameters& params, AdamState& state,
                      const TrainConfig& config, const Backend& backend)
{
    if (batch.empty())
        throw ValueError("training batch is empty");
    LossRecord record;
    std::map<std::string, Tensor> grads;
    std::vector<std::string> bad;
    for (const auto& s : batch) {
        try {
            accumulate_sample(s, params, backend, config, grads, record);
        } catch (const NonFiniteLossError&) {
            bad.push_back(s.id());
        }
    }
    if (!bad.empty()) {
        std::string ids;
        for (const auto& b : bad)
            ids += (ids.empty() ? "" : ", ") + b;
        throw NonFiniteLossError("non-finite loss; offending samples: " + ids, bad);
    }
    for (const auto& [name, g] : grads)
        for (double v : g.values())
            if (!std::isfinite(v))
                throw NonFiniteLossError("non-finite gradient for " + name, {});
    if (!grads.empty())
        adamw_update(params, state, grads, config);
    return record;
}

// --------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config, std::shared_ptr<const Backend> backend, const ImageSource& source,
                 std::vector<ContextGroup> groups, fs::path run_dir)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      source_(source),
      groups_(std::move(groups)),
      run_dir_(std::move(run_dir)),
      rng_(config_.seed)
{
    config_.validate();
    if (!backend_)
        throw BackendError("trainer needs a backend");
    if (config_.crop_size > backend_->resolution())
        throw ConfigError("crop size " + std::to_string(config_.crop_size) + " exceeds backend resolution " +
                          std::to_string(backend_->resolution()));
}

fs::path Trainer::head_checkpoint(int iteration) const
{
    std::ostringstream name;
    name << "head_" << std::setw(6) << std::setfill('0') << iteration << ".icma";
    return run_dir_ / "checkpoints" / name.str();
}

fs::path Trainer::state_checkpoint(int iteration) const
{
    std::ostringstream name;
    name << "state_" << std::setw(6) << std::setfill('0') << iteration << ".icma";
    return run_dir_ / "checkpoints" / name.str();
}

void Trainer::start()
{
    start(init_params(head_config_for(config_.profile, *backend_), config_.head_seed));
}

void Trainer::start(HeadParameters params)
{
    params.validate();
    if (params.config.feature_dims != backend_->feature_dims())
        throw ParameterError("initial parameters do not match the backend's feature dims");
    params_ = std::move(params);
    adam_ = {};
    rng_.seed(config_.seed);
    iteration_ = 0;
    fs::create_directories(run_dir_ / "checkpoints");
    const std::string snapshot = config_.to_json().dump(2) + "\n";
    io::write_bytes(run_dir_ / "config.json", {snapshot.begin(), snapshot.end()});
    std::ofstream csv(run_dir_ / "loss.csv", std::ios::trunc);
    csv << "iter,l1,laplacian,gradient,segmentation,total\n";
}

void Trainer::resume(const fs::path& state_file)
{
    const Archive a = load_archive(state_file);
    if (a.version != "icm-train/1")
        throw ParameterError("not a training state file: " + state_file.string());
    HeadParameters p;
    p.config = HeadConfig::from_json(a.meta.at("head_config"));
    AdamState s;
    for (const auto& [name, t] : a.arrays) {
        if (name.rfind("param/", 0) == 0)
            p.tensors[name.substr(6)] = t;
        else if (name.rfind("adam.m/", 0) == 0)
            s.m[name.substr(7)] = t;
        else if (name.rfind("adam.v/", 0) == 0)
            s.v[name.substr(7)] = t;
    }
    p.validate();
    s.step = a.meta.at("adam_step").get<std::int64_t>();
    std::istringstream rng_text(a.meta.at("rng").get<std::string>());
    rng_text >> rng_;
    params_ = std::move(p);
    adam_ = std::move(s);
    iteration_ = a.meta.at("iteration").get<int>();
    fs::create_directories(run_dir_ / "checkpoints");
    if (!fs::exists(run_dir_ / "loss.csv")) {
        std::ofstream csv(run_dir_ / "loss.csv");
        csv << "iter,l1,laplacian,gradient,segmentation,total\n";
    }
}

void Trainer::save_checkpoint() const
{
    save_params(head_checkpoint(iteration_), params_);
    Archive a;
    a.version = "icm-train/1";
    std::ostringstream rng_text;
    rng_text << rng_;
    a.meta = {{"iteration", iteration_},
              {"adam_step", adam_.step},
              {"rng", rng_text.str()},
              {"head_config", params_.config.to_json()},
              {"train_config", config_.to_json()}};
    for (const auto& [name, t] : params_.tensors)
        a.arrays["param/" + name] = t;
    for (const auto& [name, t] : adam_.m)
        a.arrays["adam.m/" + name] = t;
    for (const auto& [name, t] : adam_.v)
        a.arrays["adam.v/" + name] = t;
    save_archive(state_checkpoint(iteration_), a);
}

LossRecord Trainer::step()
{
    std::vector<SamplePair> batch;
    for (int i = 0; i < config_.batch_size; ++i)
        batch.push_back(sample_pair(source_, groups_, config_.crop_size, rng_, &warnings_));
    const std::uint64_t before = backend_->state_hash();
    LossRecord r = train_step(batch, params_, adam_, config_, *backend_);
    if (backend_->state_hash() != before)
        throw BackendError("backbone state changed during a training step");
    ++iteration_;

    std::ofstream csv(run_dir_ / "loss.csv", std::ios::app);
    csv << std::setprecision(17) << iteration_ << ',' << r.l1 << ',' << r.laplacian << ',' << r.gradient << ','
        << r.segmentation << ',' << r.total << '\n';
    if (iteration_ % config_.checkpoint_every == 0)
        save_checkpoint();
    return r;
}

void Trainer::run(int iterations)
{
    for (int i = 0; i < iterations; ++i)
        step();
}

// --------------------------------------------------------------------------

void MemorySource::add(const std::string& group, ImagePlane image, std::optional<ImagePlane> label)
{
    data_[group].emplace_back(std::move(image), std::move(label));
}

ImagePlane MemorySource::image(const ContextGroup& group, int member) const
{
    return data_.at(group.id).at(static_cast<std::size_t>(member)).first;
}

std::optional<ImagePlane> MemorySource::label(const ContextGroup& group, int member) const
{
    return data_.at(group.id).at(static_cast<std::size_t>(member)).second;
}

} // namespace icm
