#include "icm/service.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "icm/head.hpp"
#include "icm/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace icm {

// --------------------------------------------------------------------------
// Prompt wire format

namespace {

Point wire_point(const json& p, int height, int width)
{
    if (!p.is_object() || !p.contains("x") || !p.contains("y") || !p["x"].is_number() || !p["y"].is_number())
        throw PromptFormatError("point must be an object with numeric x and y");
    const double x = p["x"].get<double>();
    const double y = p["y"].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y) || x < 0 || x > 1 || y < 0 || y > 1)
        throw PromptFormatError("point coordinates must lie in [0, 1]");
    return {y * (height - 1), x * (width - 1)};
}

json wire_coords(const Point& p, int height, int width)
{
    return {{"x", width > 1 ? p.col / (width - 1) : 0.0}, {"y", height > 1 ? p.row / (height - 1) : 0.0}};
}

} // namespace

RoiPrompt prompt_from_json(const json& j, int height, int width, const MaskResolver& masks)
{
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw PromptFormatError("prompt needs a string 'kind'");
    PromptKind kind;
    try {
        kind = prompt_kind_from_string(j["kind"].get<std::string>());
    } catch (const Error& e) {
        throw PromptFormatError(e.what());
    }
    switch (kind) {
    case PromptKind::points: {
        if (!j.contains("points") || !j["points"].is_array())
            throw PromptFormatError("points prompt needs a 'points' array");
        std::vector<Point> pts;
        for (const auto& p : j["points"])
            pts.push_back(wire_point(p, height, width));
        return RoiPrompt::from_points(std::move(pts));
    }
    case PromptKind::scribbles: {
        if (!j.contains("strokes") || !j["strokes"].is_array())
            throw PromptFormatError("scribble prompt needs a 'strokes' array");
        double radius = kPointRadius;
        if (j.contains("radius")) {
            if (!j["radius"].is_number() || !(j["radius"].get<double>() > 0))
                throw PromptFormatError("stroke radius must be a positive number");
            radius = j["radius"].get<double>();
        }
        std::vector<Polyline> lines;
        for (const auto& s : j["strokes"]) {
            if (!s.is_array())
                throw PromptFormatError("each stroke must be an array of points");
            Polyline line;
            for (const auto& p : s)
                line.push_back(wire_point(p, height, width));
            lines.push_back(std::move(line));
        }
        return RoiPrompt::from_scribbles(std::move(lines), radius);
    }
    case PromptKind::mask: {
        if (!j.contains("mask_ref") || !j["mask_ref"].is_string())
            throw PromptFormatError("mask prompt needs a string 'mask_ref'");
        if (!masks)
            throw PromptFormatError("mask references cannot be resolved here");
        return RoiPrompt::from_mask(masks(j["mask_ref"].get<std::string>()));
    }
    }
    throw PromptFormatError("unknown prompt kind");
}

json prompt_to_json(const RoiPrompt& prompt, int height, int width)
{
    json j = {{"kind", to_string(prompt.kind)}};
    if (prompt.kind == PromptKind::points) {
        json pts = json::array();
        for (const auto& p : prompt.points)
            pts.push_back(wire_coords(p, height, width));
        j["points"] = pts;
    } else if (prompt.kind == PromptKind::scribbles) {
        json strokes = json::array();
        for (const auto& line : prompt.scribbles) {
            json s = json::array();
            for (const auto& p : line)
                s.push_back(wire_coords(p, height, width));
            strokes.push_back(s);
        }
        j["strokes"] = strokes;
        j["radius"] = prompt.stroke_radius;
    } else {
        throw ValueError("mask prompts travel as uploaded images, not inline JSON");
    }
    return j;
}

std::vector<unsigned char> encode_alpha_png(const AlphaMatte& alpha)
{
    return io::encode_png(alpha.plane(), 16);
}

std::shared_ptr<MattingPipeline> load_pipeline(const PipelineSpec& spec)
{
    if (spec.checkpoint.empty())
        throw ParameterError("no head checkpoint given");
    HeadParameters params = load_params(spec.checkpoint);
    std::string features = spec.features_dir;
    if (features.empty())
        features = (fs::path(spec.checkpoint).parent_path() / "features").string();
    std::shared_ptr<Backend> backend;
    if (spec.backend == BackendKind::toy) {
        backend = std::make_shared<ToyBackend>();
    } else {
        DiffusionConfig cfg;
        cfg.checkpoint = features;
        cfg.timestep = spec.timestep;
        cfg.noise_seed = spec.seed;
        backend = std::make_shared<DiffusionBackend>(cfg);
    }
    return std::make_shared<MattingPipeline>(std::move(backend), std::move(params), spec.options);
}

// --------------------------------------------------------------------------

ServiceConfig ServiceConfig::from_env()
{
    ServiceConfig c;
    auto env = [](const char* name) -> std::string {
        const char* v = std::getenv(name);
        return v ? v : "";
    };
    if (auto v = env("ICONMAT_STORE"); !v.empty())
        c.store = v;
    c.pipeline.checkpoint = env("ICONMAT_CHECKPOINT");
    c.pipeline.features_dir = env("ICONMAT_FEATURES");
    if (auto v = env("ICONMAT_BACKEND"); !v.empty())
        c.pipeline.backend = backend_kind_from_string(v);
    try {
        if (auto v = env("ICONMAT_PORT"); !v.empty())
            c.port = std::stoi(v);
        if (auto v = env("ICONMAT_TIMESTEP"); !v.empty())
            c.pipeline.timestep = std::stoi(v);
    } catch (const std::exception&) {
        throw ConfigError("ICONMAT_PORT and ICONMAT_TIMESTEP must be integers");
    }
    return c;
}

std::string to_string(JobState s)
{
    switch (s) {
    case JobState::queued:
        return "queued";
    case JobState::running:
        return "running";
    case JobState::done:
        return "done";
    case JobState::failed:
        return "failed";
    }
    return "failed";
}

JobState job_state_from_string(const std::string& s)
{
    if (s == "queued")
        return JobState::queued;
    if (s == "running")
        return JobState::running;
    if (s == "done")
        return JobState::done;
    if (s == "failed")
        return JobState::failed;
    throw ValueError("unknown job state '" + s + "'");
}

// --------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    io::write_bytes(tmp, {text.begin(), text.end()});
    fs::rename(tmp, path);
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    return json::parse(in);
}

void reply(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& message)
{
    reply(res, status, {{"error", message}});
}

} // namespace

MattingService::MattingService(fs::path store, std::shared_ptr<const MattingPipeline> pipeline,
                               std::string checkpoint_digest)
    : store_(std::move(store)),
      pipeline_(std::move(pipeline)),
      checkpoint_digest_(std::move(checkpoint_digest)),
      server_(std::make_unique<httplib::Server>())
{
    if (checkpoint_digest_.empty() && pipeline_)
        checkpoint_digest_ = hex64(pipeline_->params().digest());
    fs::create_directories(store_ / "sessions");
    fs::create_directories(store_ / "jobs");
    load_store();
    routes();
    worker_ = std::thread([this] { worker_loop(); });
}

MattingService::~MattingService()
{
    stop();
    {
        std::lock_guard lock(jobs_mutex_);
        stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (worker_.joinable())
        worker_.join();
}

bool MattingService::listen(const std::string& host, int port)
{
    return server_->listen(host, port);
}

int MattingService::bind_to_any_port(const std::string& host)
{
    return server_->bind_to_any_port(host);
}

bool MattingService::listen_after_bind()
{
    return server_->listen_after_bind();
}

void MattingService::stop()
{
    server_->stop();
}

void MattingService::wait_idle()
{
    std::unique_lock lock(jobs_mutex_);
    jobs_cv_.wait(lock, [this] { return (queue_.empty() && !busy_) || stopping_; });
}

fs::path MattingService::session_dir(const std::string& id) const
{
    return store_ / "sessions" / id;
}

fs::path MattingService::job_dir(const std::string& id) const
{
    return store_ / "jobs" / id;
}

std::string MattingService::next_id(const std::string& prefix)
{
    std::lock_guard lock(jobs_mutex_);
    std::ostringstream s;
    s << prefix << std::setw(6) << std::setfill('0') << ++counter_;
    return s.str();
}

void MattingService::save_session(const Session& s) const
{
    json images = json::array();
    for (const auto& i : s.images)
        images.push_back({{"id", i.id}, {"name", i.name}, {"role", i.role}});
    write_text(session_dir(s.id) / "session.json",
               json{{"id", s.id}, {"images", images}, {"prompt", s.prompt}, {"jobs", s.jobs}}.dump(2));
}

json MattingService::job_json(const Job& j) const
{
    json results = json::object(), guidance = json::object();
    if (j.state == JobState::done) {
        for (const auto& [img, _] : j.results)
            results[img] = "/jobs/" + j.id + "/results/" + img;
        for (const auto& [img, _] : j.guidance)
            guidance[img] = "/jobs/" + j.id + "/guidance/" + img;
    }
    json out = {{"id", j.id},
                {"session", j.session},
                {"state", to_string(j.state)},
                {"progress", {{"done", j.done}, {"total", j.targets.size()}}},
                {"targets", j.targets},
                {"results", results},
                {"guidance", guidance}};
    if (!j.error.empty())
        out["error"] = j.error;
    return out;
}

void MattingService::save_job(const Job& j) const
{
    json out = job_json(j);
    out["result_files"] = j.results;
    out["guidance_files"] = j.guidance;
    out["cache_key"] = j.cache_key;
    out["prompt"] = j.prompt;
    write_text(job_dir(j.id) / "job.json", out.dump(2));
}

void MattingService::load_store()
{
    auto bump = [this](const std::string& id) {
        if (id.size() > 1)
            counter_ = std::max<std::uint64_t>(counter_, std::stoull(id.substr(1)));
    };
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(store_ / "sessions"))
        if (fs::exists(e.path() / "session.json"))
            dirs.push_back(e.path());
    for (const auto& d : dirs) {
        const json j = read_json(d / "session.json");
        auto s = std::make_shared<Session>();
        s->id = j.at("id").get<std::string>();
        for (const auto& i : j.at("images"))
            s->images.push_back({i.at("id"), i.at("name"), i.value("role", std::string("image"))});
        s->prompt = j.value("prompt", json());
        s->jobs = j.value("jobs", std::vector<std::string>{});
        bump(s->id);
        for (const auto& i : s->images)
            bump(i.id);
        sessions_[s->id] = s;
    }

    std::vector<std::string> pending;
    for (const auto& e : fs::directory_iterator(store_ / "jobs")) {
        if (!fs::exists(e.path() / "job.json"))
            continue;
        const json j = read_json(e.path() / "job.json");
        Job job;
        job.id = j.at("id").get<std::string>();
        job.session = j.at("session").get<std::string>();
        job.state = job_state_from_string(j.at("state").get<std::string>());
        job.targets = j.at("targets").get<std::vector<std::string>>();
        job.done = j.at("progress").at("done").get<int>();
        job.results = j.value("result_files", std::map<std::string, std::string>{});
        job.guidance = j.value("guidance_files", std::map<std::string, std::string>{});
        job.error = j.value("error", std::string());
        job.cache_key = j.value("cache_key", std::string());
        job.prompt = j.value("prompt", json());
        bump(job.id);
        if (job.state == JobState::running || job.state == JobState::queued) {
            // Interrupted work starts over.
            job.state = JobState::queued;
            job.done = 0;
            job.results.clear();
            job.guidance.clear();
            pending.push_back(job.id);
        } else if (job.state == JobState::done && !job.cache_key.empty()) {
            cache_[job.cache_key] = job.id;
        }
        jobs_[job.id] = job;
    }
    std::sort(pending.begin(), pending.end());
    for (const auto& id : pending) {
        save_job(jobs_[id]);
        queue_.push_back(id);
    }
}

std::shared_ptr<MattingService::Session> MattingService::find_session(const std::string& id)
{
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::string MattingService::cache_key(const Session& s, const json& prompt) const
{
    std::uint64_t h = fnv1a(checkpoint_digest_.data(), checkpoint_digest_.size());
    for (const auto& i : s.images) {
        const auto bytes = io::read_bytes(session_dir(s.id) / "images" / (i.id + ".png"));
        h = fnv1a(i.id.data(), i.id.size(), h);
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    const std::string p = prompt.dump();
    return hex64(fnv1a(p.data(), p.size(), h));
}

void MattingService::routes()
{
    auto& srv = *server_;

    srv.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        std::lock_guard lock(sessions_mutex_);
        json ids = json::array();
        for (const auto& [id, _] : sessions_)
            ids.push_back(id);
        reply(res, 200, {{"sessions", ids}});
    });

    srv.Post("/sessions", [this](const httplib::Request&, httplib::Response& res) {
        auto s = std::make_shared<Session>();
        s->id = next_id("s");
        fs::create_directories(session_dir(s->id) / "images");
        save_session(*s);
        {
            std::lock_guard lock(sessions_mutex_);
            sessions_[s->id] = s;
        }
        reply(res, 201, {{"id", s->id}});
    });

    srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(req.matches[1]);
        if (!s)
            return fail(res, 404, "unknown session");
        std::lock_guard lock(s->mutex);
        json images = json::array();
        for (const auto& i : s->images)
            images.push_back({{"id", i.id}, {"name", i.name}, {"role", i.role}});
        reply(res, 200, {{"id", s->id}, {"images", images}, {"prompt", s->prompt}, {"jobs", s->jobs}});
    });

    srv.Post(R"(/sessions/([^/]+)/images)", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(req.matches[1]);
        if (!s)
            return fail(res, 404, "unknown session");
        std::vector<std::pair<httplib::MultipartFormData, std::string>> parts;
        for (const auto& f : req.get_file_values("file"))
            parts.emplace_back(f, "image");
        for (const auto& f : req.get_file_values("mask"))
            parts.emplace_back(f, "mask");
        if (parts.empty())
            return fail(res, 400, "expected multipart fields 'file' or 'mask'");
        for (const auto& [f, role] : parts) {
            try {
                io::decode_png({f.content.begin(), f.content.end()});
            } catch (const Error& e) {
                return fail(res, 400, "'" + f.filename + "' is not a readable PNG: " + e.what());
            }
        }
        json added = json::array();
        std::lock_guard lock(s->mutex);
        for (const auto& [f, role] : parts) {
            Image img{next_id("i"), f.filename, role};
            io::write_bytes(session_dir(s->id) / "images" / (img.id + ".png"), {f.content.begin(), f.content.end()});
            s->images.push_back(img);
            added.push_back({{"id", img.id}, {"name", img.name}, {"role", img.role}});
        }
        save_session(*s);
        reply(res, 201, {{"images", added}});
    });

    srv.Put(R"(/sessions/([^/]+)/prompt)", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(req.matches[1]);
        if (!s)
            return fail(res, 404, "unknown session");
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return fail(res, 422, "prompt body is not JSON");
        }
        std::lock_guard lock(s->mutex);
        if (!body.is_object() || !body.contains("reference_image_id") || !body["reference_image_id"].is_string())
            return fail(res, 422, "prompt needs a string 'reference_image_id'");
        const std::string ref = body["reference_image_id"];
        const auto has = [&](const std::string& id, const std::string& role) {
            return std::any_of(s->images.begin(), s->images.end(),
                               [&](const Image& i) { return i.id == id && i.role == role; });
        };
        if (!has(ref, "image"))
            return fail(res, 422, "reference_image_id does not name an uploaded image");
        try {
            const ImagePlane image = io::read_png(session_dir(s->id) / "images" / (ref + ".png"));
            prompt_from_json(body, image.height(), image.width(), [&](const std::string& id) {
                if (!has(id, "mask"))
                    throw PromptFormatError("mask_ref does not name an uploaded mask");
                return ImagePlane::filled(image.height(), image.width(), 1, 0.0);
            });
        } catch (const PromptFormatError& e) {
            return fail(res, 422, e.what());
        }
        s->prompt = body;
        save_session(*s);
        reply(res, 200, {{"prompt", body}});
    });

    srv.Post(R"(/sessions/([^/]+)/jobs)", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = find_session(req.matches[1]);
        if (!s)
            return fail(res, 404, "unknown session");
        if (!pipeline_)
            return fail(res, 503, "matting backend unavailable");
        std::unique_lock slock(s->mutex);
        if (s->prompt.is_null())
            return fail(res, 409, "no prompt set");
        const std::string ref = s->prompt["reference_image_id"];
        try {
            const ImagePlane image = io::read_png(session_dir(s->id) / "images" / (ref + ".png"));
            const RoiPrompt prompt = prompt_from_json(s->prompt, image.height(), image.width(), [&](const std::string& id) {
                return binarize(io::read_png(session_dir(s->id) / "images" / (id + ".png")).channel(0), 0.5);
            });
            rasterize_prompt(prompt, image.height(), image.width());
        } catch (const EmptyPromptError& e) {
            return fail(res, 409, e.what());
        } catch (const Error& e) {
            return fail(res, 422, e.what());
        }

        Job job;
        job.id = next_id("j");
        job.session = s->id;
        job.prompt = s->prompt;
        for (const auto& i : s->images)
            if (i.role == "image" && i.id != ref)
                job.targets.push_back(i.id);
        if (job.targets.empty())
            return fail(res, 409, "no target images besides the reference");
        job.cache_key = cache_key(*s, s->prompt);
        s->jobs.push_back(job.id);
        save_session(*s);
        slock.unlock();

        std::lock_guard lock(jobs_mutex_);
        const auto hit = cache_.find(job.cache_key);
        if (hit != cache_.end() && jobs_.count(hit->second) && jobs_[hit->second].state == JobState::done) {
            const Job& prev = jobs_[hit->second];
            fs::create_directories(job_dir(job.id) / "results");
            for (const auto& [img, file] : prev.results) {
                fs::copy_file(job_dir(prev.id) / file, job_dir(job.id) / file, fs::copy_options::overwrite_existing);
                job.results[img] = file;
            }
            for (const auto& [img, file] : prev.guidance) {
                fs::copy_file(job_dir(prev.id) / file, job_dir(job.id) / file, fs::copy_options::overwrite_existing);
                job.guidance[img] = file;
            }
            job.done = static_cast<int>(job.targets.size());
            job.state = JobState::done;
            save_job(job);
            jobs_[job.id] = job;
        } else {
            save_job(job);
            jobs_[job.id] = job;
            queue_.push_back(job.id);
            jobs_cv_.notify_all();
        }
        reply(res, 202, job_json(jobs_[job.id]));
    });

    srv.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(jobs_mutex_);
        const auto it = jobs_.find(req.matches[1]);
        if (it == jobs_.end())
            return fail(res, 404, "unknown job");
        reply(res, 200, job_json(it->second));
    });

    auto serve_file = [this](bool guidance) {
        return [this, guidance](const httplib::Request& req, httplib::Response& res) {
            fs::path path;
            {
                std::lock_guard lock(jobs_mutex_);
                const auto it = jobs_.find(req.matches[1]);
                if (it == jobs_.end())
                    return fail(res, 404, "unknown job");
                const auto& files = guidance ? it->second.guidance : it->second.results;
                const auto f = files.find(req.matches[2]);
                if (it->second.state != JobState::done || f == files.end())
                    return fail(res, 404, "no result for that image");
                path = job_dir(it->first) / f->second;
            }
            const auto bytes = io::read_bytes(path);
            res.status = 200;
            res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
        };
    };
    srv.Get(R"(/jobs/([^/]+)/results/([^/]+))", serve_file(false));
    srv.Get(R"(/jobs/([^/]+)/guidance/([^/]+))", serve_file(true));
}

void MattingService::worker_loop()
{
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(jobs_mutex_);
            jobs_cv_.wait(lock, [this] { return stopping_ || (!queue_.empty() && pipeline_); });
            if (stopping_)
                return;
            id = queue_.front();
            queue_.pop_front();
            busy_ = true;
        }
        run_job(id);
        {
            std::lock_guard lock(jobs_mutex_);
            busy_ = false;
        }
        jobs_cv_.notify_all();
    }
}

void MattingService::run_job(const std::string& job_id)
{
    Job job;
    {
        std::lock_guard lock(jobs_mutex_);
        auto& j = jobs_.at(job_id);
        j.state = JobState::running;
        save_job(j);
        job = j;
    }
    const fs::path images = session_dir(job.session) / "images";
    try {
        const std::string ref = job.prompt.at("reference_image_id");
        const ImagePlane ref_image = io::read_rgb(images / (ref + ".png"));
        const RoiPrompt prompt =
            prompt_from_json(job.prompt, ref_image.height(), ref_image.width(), [&](const std::string& id) {
                return binarize(io::read_png(images / (id + ".png")).channel(0), 0.5);
            });
        const InContextQuery query = pipeline_->query({ReferenceInput{ref_image, prompt}});
        fs::create_directories(job_dir(job.id) / "results");
        for (const auto& target : job.targets) {
            const TargetResult r = pipeline_->infer_one(query, io::read_rgb(images / (target + ".png")));
            const std::string alpha_file = "results/" + target + "_alpha.png";
            const std::string guide_file = "results/" + target + "_guidance.png";
            io::write_bytes(job_dir(job.id) / alpha_file, encode_alpha_png(r.alpha));
            io::write_png(job_dir(job.id) / guide_file, r.guidance_image, 8);
            std::lock_guard lock(jobs_mutex_);
            auto& j = jobs_.at(job_id);
            j.results[target] = alpha_file;
            j.guidance[target] = guide_file;
            ++j.done;
            save_job(j);
        }
        std::lock_guard lock(jobs_mutex_);
        auto& j = jobs_.at(job_id);
        j.state = JobState::done;
        save_job(j);
        cache_[j.cache_key] = j.id;
    } catch (const std::exception& e) {
        std::lock_guard lock(jobs_mutex_);
        auto& j = jobs_.at(job_id);
        j.state = JobState::failed;
        j.error = e.what();
        j.results.clear();
        j.guidance.clear();
        save_job(j);
    }
}

} // namespace icm
