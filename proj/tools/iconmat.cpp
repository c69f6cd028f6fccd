#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icm/backend.hpp"
#include "icm/data.hpp"
#include "icm/head.hpp"
#include "icm/image_io.hpp"
#include "icm/pipeline.hpp"
#include "icm/protocol.hpp"
#include "icm/service.hpp"
#include "icm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icm;

namespace {

enum Exit { ok = 0, generic = 1, bad_flags = 2, backend_failure = 3, empty_prompt = 4, non_finite = 5 };

struct UsageError : Error {
    using Error::Error;
};

struct Common {
    std::string checkpoint;
    std::string backend = "toy";
    std::string features;
    int timestep = 200;
    std::uint64_t seed = 0;
    bool no_inter = false;
    bool no_intra = false;
    bool single_scale = false;
    int extension = kDefaultExtension;

    void add(CLI::App* app, bool need_checkpoint)
    {
        auto* c = app->add_option("--checkpoint", checkpoint, "Head parameter file (.icma)");
        if (need_checkpoint)
            c->required();
        app->add_option("--backend", backend, "Feature backend")->check(CLI::IsMember({"toy", "diffusion"}));
        app->add_option("--features", features, "Diffusion feature dump directory");
        app->add_option("--timestep", timestep, "Diffusion timestep")->check(CLI::Range(0, 999));
        app->add_option("--seed", seed, "Seed");
        app->add_flag("--no-inter", no_inter, "Uniform inter-similarity");
        app->add_flag("--no-intra", no_intra, "Skip attention propagation");
        app->add_flag("--single-scale", single_scale, "Propagate at the inter scale only");
        app->add_option("--extension", extension, "Prompt extension per RoI cell (0 disables)")
            ->check(CLI::NonNegativeNumber);
    }

    PipelineSpec spec() const
    {
        PipelineSpec s;
        s.backend = backend_kind_from_string(backend);
        s.checkpoint = checkpoint;
        s.features_dir = features;
        s.timestep = timestep;
        s.seed = seed;
        s.options.guidance.use_inter = !no_inter;
        s.options.guidance.use_intra = !no_intra;
        s.options.guidance.multi_scale = !single_scale;
        s.options.extension = extension;
        return s;
    }
};

std::shared_ptr<MattingPipeline> open_pipeline(const PipelineSpec& spec)
{
    try {
        return load_pipeline(spec);
    } catch (const EmptyPromptError&) {
        throw;
    } catch (const Error& e) {
        throw BackendError(std::string("cannot load pipeline: ") + e.what());
    }
}

bool has_extension(const fs::path& p, const char* ext)
{
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

RoiPrompt read_prompt(const fs::path& path, PromptKind kind, const ImagePlane& reference)
{
    if (!fs::exists(path))
        throw UsageError("prompt file " + path.string() + " does not exist");
    if (has_extension(path, ".png")) {
        if (kind != PromptKind::mask)
            throw UsageError("PNG prompts are masks; use --prompt-kind mask");
        return RoiPrompt::from_mask(binarize(io::read_png(path).channel(0), 0.5));
    }
    json j;
    try {
        std::ifstream in(path);
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("prompt " + path.string() + " is not JSON: " + e.what());
    }
    if (j.is_object() && !j.contains("kind"))
        j["kind"] = to_string(kind);
    if (j.is_object() && j["kind"] != to_string(kind))
        throw UsageError("prompt file kind '" + j["kind"].get<std::string>() + "' does not match --prompt-kind");
    try {
        return prompt_from_json(j, reference.height(), reference.width(), [&](const std::string& ref) {
            return binarize(io::read_png(path.parent_path() / ref).channel(0), 0.5);
        });
    } catch (const PromptFormatError& e) {
        throw UsageError(e.what());
    }
}

std::vector<fs::path> list_targets(const fs::path& targets)
{
    std::vector<fs::path> out;
    if (fs::is_directory(targets)) {
        for (const auto& e : fs::directory_iterator(targets))
            if (e.is_regular_file() && has_extension(e.path(), ".png"))
                out.push_back(e.path());
        std::sort(out.begin(), out.end());
    } else if (fs::is_regular_file(targets) && has_extension(targets, ".json")) {
        const Manifest m = read_manifest(targets);
        for (const auto& g : m.groups)
            for (const auto& mem : g.members)
                out.push_back(m.resolve(mem.image));
    } else {
        throw UsageError("--targets must be a directory of PNGs or a manifest JSON");
    }
    if (out.empty())
        throw UsageError("no target images found in " + targets.string());
    return out;
}

int cmd_infer(const Common& common, const std::string& targets, const std::string& reference,
              const std::string& prompt_path, const std::string& kind_name, const std::vector<std::string>& refs,
              const std::vector<std::string>& ref_prompts, const std::string& out, bool save_guidance)
{
    const PromptKind kind = prompt_kind_from_string(kind_name);
    if (refs.size() != ref_prompts.size())
        throw UsageError("--refs and --ref-prompts must have the same length");
    const auto target_paths = list_targets(targets);

    MattingRequest request;
    auto add_reference = [&](const fs::path& image_path, const fs::path& p) {
        if (!fs::exists(image_path))
            throw UsageError("reference image " + image_path.string() + " does not exist");
        ImagePlane image = io::read_rgb(image_path);
        RoiPrompt prompt = read_prompt(p, kind, image);
        request.references.push_back({std::move(image), std::move(prompt)});
    };
    add_reference(reference, prompt_path);
    for (std::size_t i = 0; i < refs.size(); ++i)
        add_reference(refs[i], ref_prompts[i]);
    // Empty prompts are reported before any expensive work.
    for (const auto& r : request.references)
        rasterize_prompt(r.prompt, r.image.height(), r.image.width());

    const auto pipeline = open_pipeline(common.spec());
    for (const auto& t : target_paths)
        request.targets.push_back(io::read_rgb(t));
    const auto results = pipeline->infer(request);

    fs::create_directories(out);
    json outputs = json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const std::string stem = target_paths[i].stem().string();
        const fs::path alpha = fs::path(out) / (stem + "_alpha.png");
        io::write_bytes(alpha, encode_alpha_png(results[i].alpha));
        json entry = {{"target", target_paths[i].string()}, {"alpha", alpha.filename().string()}};
        if (save_guidance) {
            const fs::path guide = fs::path(out) / (stem + "_guidance.png");
            io::write_png(guide, results[i].guidance_image, 8);
            entry["guidance"] = guide.filename().string();
        }
        outputs.push_back(entry);
    }
    const std::string text = json{{"checkpoint", common.checkpoint},
                                  {"backend", common.backend},
                                  {"seed", common.seed},
                                  {"prompt_kind", kind_name},
                                  {"outputs", outputs}}
                                 .dump(2) +
                             "\n";
    io::write_bytes(fs::path(out) / "outputs.json", {text.begin(), text.end()});
    std::cout << "wrote " << results.size() << " alpha mattes to " << out << "\n";
    return ok;
}

void write_text(const fs::path& path, const std::string& text)
{
    io::write_bytes(path, {text.begin(), text.end()});
}

int cmd_eval(const Common& common, const std::string& manifest_path, const std::string& kind_name, int rounds,
             const std::string& out, bool include_refs, int points, bool oracle)
{
    if (!fs::exists(manifest_path))
        throw UsageError("manifest " + manifest_path + " does not exist");
    Manifest manifest;
    try {
        manifest = read_manifest(manifest_path);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    ProtocolOptions opt;
    opt.kind = prompt_kind_from_string(kind_name);
    opt.rounds = rounds;
    opt.seed = common.seed;
    opt.include_references = include_refs;
    opt.points = points;

    ManifestSource source(manifest);
    std::shared_ptr<MattingPipeline> pipeline;
    std::unique_ptr<MattingModel> model;
    if (oracle) {
        model = std::make_unique<OracleModel>(source);
    } else {
        if (common.checkpoint.empty())
            throw UsageError("--checkpoint is required unless --oracle is given");
        pipeline = open_pipeline(common.spec());
        model = std::make_unique<PipelineModel>(*pipeline);
    }

    fs::create_directories(out);
    const auto sink = [&](int round, const ContextGroup& g, int member, const AlphaMatte& alpha) {
        const fs::path dir = fs::path(out) / "predictions" / ("round" + std::to_string(round)) / g.id;
        fs::create_directories(dir);
        const std::string stem = fs::path(g.members[static_cast<std::size_t>(member)].image).stem().string();
        io::write_png(dir / (stem + "_alpha.png"), alpha.plane(), 8);
    };
    const ProtocolResult result = run_protocol(*model, source, manifest.groups, opt, sink);
    for (const auto& w : result.warnings)
        std::cerr << "warning: " << w << "\n";
    for (const auto& r : result.rounds) {
        write_text(fs::path(out) / ("report_round" + std::to_string(r.round) + ".json"), r.to_json().dump(2) + "\n");
        write_text(fs::path(out) / ("report_round" + std::to_string(r.round) + ".csv"), r.to_csv());
    }
    write_text(fs::path(out) / "report.json", result.average.to_json().dump(2) + "\n");
    write_text(fs::path(out) / "report.csv", result.average.to_csv());
    const auto& o = result.average.overall;
    std::cout << "images " << result.average.images.size() << "  MSE " << o.mse << "  SAD " << o.sad << "  Grad "
              << o.grad << "  Conn " << o.conn << "\n";
    return ok;
}

int cmd_train(const Common& common, const std::string& manifest_path, const std::string& config_path,
              const std::string& out, const std::string& profile, int iters, const std::string& resume)
{
    if (!fs::exists(manifest_path))
        throw UsageError("manifest " + manifest_path + " does not exist");
    TrainConfig config = profile == "toy" ? TrainConfig::toy() : TrainConfig{};
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in)
            throw UsageError("cannot read config " + config_path);
        try {
            json j = json::parse(in);
            if (!j.contains("profile"))
                j["profile"] = profile;
            config = TrainConfig::from_json(j);
        } catch (const json::exception& e) {
            throw UsageError(std::string("config is not JSON: ") + e.what());
        }
    }
    if (iters >= 0)
        config.iterations = iters;

    const Manifest manifest = read_manifest(manifest_path);
    ManifestSource source(manifest);
    std::shared_ptr<Backend> backend;
    try {
        PipelineSpec spec = common.spec();
        if (spec.backend == BackendKind::toy) {
            ToyConfig tc;
            tc.resolution = std::max(64, config.crop_size);
            backend = std::make_shared<ToyBackend>(tc);
        } else {
            DiffusionConfig dc;
            dc.checkpoint = common.features;
            dc.timestep = common.timestep;
            dc.noise_seed = common.seed;
            backend = std::make_shared<DiffusionBackend>(dc);
        }
    } catch (const Error& e) {
        throw BackendError(e.what());
    }

    Trainer trainer(config, backend, source, manifest.groups, out);
    if (!resume.empty()) {
        try {
            trainer.resume(resume);
        } catch (const Error& e) {
            throw BackendError(std::string("cannot resume: ") + e.what());
        }
    } else if (!common.checkpoint.empty()) {
        trainer.start(load_params(common.checkpoint));
    } else {
        trainer.start();
    }
    while (trainer.iteration() < config.iterations) {
        const LossRecord r = trainer.step();
        if (trainer.iteration() % 10 == 0 || trainer.iteration() == config.iterations)
            std::cout << "iter " << trainer.iteration() << " loss " << r.total << "\n";
    }
    trainer.save_checkpoint();
    save_params(fs::path(out) / "head_final.icma", trainer.params());
    for (const auto& w : trainer.warnings())
        std::cerr << "warning: " << w << "\n";
    return ok;
}

int cmd_init(const std::string& profile, const std::string& backend_name, std::uint64_t seed, const std::string& out)
{
    std::shared_ptr<Backend> backend;
    if (backend_name == "toy")
        backend = std::make_shared<ToyBackend>();
    HeadConfig cfg;
    if (backend)
        cfg = head_config_for(profile, *backend);
    else
        cfg = profile == "toy" ? HeadConfig::toy() : HeadConfig::standard();
    cfg.seed = seed;
    const HeadParameters p = init_params(cfg, seed);
    if (fs::path(out).has_parent_path())
        fs::create_directories(fs::path(out).parent_path());
    save_params(out, p);
    std::cout << "wrote " << p.count() << " parameters to " << out << "\n";
    return ok;
}

int cmd_serve(ServiceConfig cfg)
{
    std::shared_ptr<MattingPipeline> pipeline;
    try {
        pipeline = load_pipeline(cfg.pipeline);
    } catch (const Error& e) {
        std::cerr << "warning: backend unavailable (" << e.what() << "); job requests will answer 503\n";
    }
    MattingService service(cfg.store, pipeline);
    std::cout << "serving on port " << cfg.port << ", store " << cfg.store << std::endl;
    return service.listen("0.0.0.0", cfg.port) ? ok : generic;
}

int cmd_ingest(const std::string& root, const std::string& out, const std::string& split)
{
    IngestResult r = ingest_tree(root, split_from_string(split));
    for (const auto& w : r.warnings)
        std::cerr << "warning: " << w << "\n";
    // Member paths are relative to the manifest's own directory.
    const fs::path base = fs::absolute(fs::path(out)).parent_path();
    for (auto& g : r.manifest.groups)
        for (auto& m : g.members) {
            m.image = fs::relative(fs::absolute(fs::path(root) / m.image), base).generic_string();
            m.label = fs::relative(fs::absolute(fs::path(root) / m.label), base).generic_string();
        }
    write_manifest(out, r.manifest);
    std::cout << r.manifest.groups.size() << " groups, " << r.manifest.image_count() << " images\n";
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"In-context image matting"};
    app.require_subcommand(1);

    Common common;

    auto* infer = app.add_subcommand("infer", "Matte target images guided by a prompted reference");
    std::string targets, reference, prompt, kind = "mask", out;
    std::vector<std::string> refs, ref_prompts;
    bool save_guidance = false;
    common.add(infer, true);
    infer->add_option("--targets", targets, "Directory of PNGs or manifest")->required();
    infer->add_option("--reference", reference, "Reference image")->required();
    infer->add_option("--prompt", prompt, "Mask PNG or prompt JSON")->required();
    infer->add_option("--prompt-kind", kind)->check(CLI::IsMember({"mask", "points", "scribbles"}));
    infer->add_option("--refs", refs, "Additional reference images");
    infer->add_option("--ref-prompts", ref_prompts, "Prompts for --refs, same order");
    infer->add_option("--out", out, "Output directory")->required();
    infer->add_flag("--save-guidance", save_guidance);

    auto* eval = app.add_subcommand("eval", "Fixed-reference evaluation over a manifest");
    std::string manifest, eval_kind = "mask", eval_out;
    int rounds = 3, points = 5;
    bool include_refs = false, oracle = false;
    common.add(eval, false);
    eval->add_option("--manifest", manifest)->required();
    eval->add_option("--prompt-kind", eval_kind)->check(CLI::IsMember({"mask", "points", "scribbles"}));
    eval->add_option("--rounds", rounds)->check(CLI::PositiveNumber);
    eval->add_option("--points", points)->check(CLI::PositiveNumber);
    eval->add_option("--out", eval_out)->required();
    eval->add_flag("--include-references", include_refs);
    eval->add_flag("--oracle", oracle, "Score the ground truth itself");

    auto* train = app.add_subcommand("train", "Train the matting head");
    std::string train_manifest, config_path, train_out, profile = "standard", resume;
    int iters = -1;
    common.add(train, false);
    train->add_option("--manifest", train_manifest)->required();
    train->add_option("--config", config_path, "Training config JSON");
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--profile", profile)->check(CLI::IsMember({"standard", "toy"}));
    train->add_option("--iters", iters)->check(CLI::NonNegativeNumber);
    train->add_option("--resume", resume, "Training state checkpoint");

    auto* init = app.add_subcommand("init", "Write freshly initialized head parameters");
    std::string init_profile = "toy", init_backend = "toy", init_out;
    std::uint64_t init_seed = 0;
    init->add_option("--profile", init_profile)->check(CLI::IsMember({"standard", "toy"}));
    init->add_option("--backend", init_backend)->check(CLI::IsMember({"toy", "diffusion"}));
    init->add_option("--seed", init_seed);
    init->add_option("--out", init_out)->required();

    auto* serve = app.add_subcommand("serve", "HTTP job service (configured from ICONMAT_* env vars)");
    std::string store, serve_checkpoint, serve_backend, serve_features;
    int port = -1;
    serve->add_option("--store", store);
    serve->add_option("--checkpoint", serve_checkpoint);
    serve->add_option("--backend", serve_backend)->check(CLI::IsMember({"toy", "diffusion"}));
    serve->add_option("--features", serve_features);
    serve->add_option("--port", port)->check(CLI::Range(1, 65535));

    auto* ingest = app.add_subcommand("ingest", "Build a manifest from a <group>/{images,labels} tree");
    std::string ingest_root, ingest_out, split = "test";
    ingest->add_option("--root", ingest_root)->required();
    ingest->add_option("--out", ingest_out)->required();
    ingest->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : bad_flags;
    }

    try {
        if (*infer)
            return cmd_infer(common, targets, reference, prompt, kind, refs, ref_prompts, out, save_guidance);
        if (*eval)
            return cmd_eval(common, manifest, eval_kind, rounds, eval_out, include_refs, points, oracle);
        if (*train)
            return cmd_train(common, train_manifest, config_path, train_out, profile, iters, resume);
        if (*init)
            return cmd_init(init_profile, init_backend, init_seed, init_out);
        if (*serve) {
            ServiceConfig cfg = ServiceConfig::from_env();
            if (!store.empty())
                cfg.store = store;
            if (!serve_checkpoint.empty())
                cfg.pipeline.checkpoint = serve_checkpoint;
            if (!serve_backend.empty())
                cfg.pipeline.backend = backend_kind_from_string(serve_backend);
            if (!serve_features.empty())
                cfg.pipeline.features_dir = serve_features;
            if (port > 0)
                cfg.port = port;
            return cmd_serve(cfg);
        }
        if (*ingest)
            return cmd_ingest(ingest_root, ingest_out, split);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return bad_flags;
    } catch (const EmptyPromptError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return empty_prompt;
    } catch (const NonFiniteLossError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return non_finite;
    } catch (const BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return backend_failure;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return backend_failure;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return bad_flags;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return generic;
    }
    return generic;
}
