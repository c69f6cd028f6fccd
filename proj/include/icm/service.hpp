#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "icm/backend.hpp"
#include "icm/core.hpp"
#include "icm/pipeline.hpp"

namespace httplib {
class Server;
}

namespace icm {

// --------------------------------------------------------------------------
// Prompt wire format
//
//   {"kind": "points",    "points":  [{"x": 0.5, "y": 0.25}, ...]}
//   {"kind": "scribbles", "strokes": [[{"x": .., "y": ..}, ...], ...], "radius": 3}
//   {"kind": "mask",      "mask_ref": "<id>"}
//
// x runs along columns and y along rows, both normalized so that 0 and 1 are
// the centers of the first and last pixel: col = x (W - 1), row = y (H - 1).

struct PromptFormatError : ValueError {
    using ValueError::ValueError;
};

using MaskResolver = std::function<ImagePlane(const std::string& ref)>;

/// Throws PromptFormatError on malformed JSON content.
RoiPrompt prompt_from_json(const nlohmann::json& j, int height, int width, const MaskResolver& masks = {});

/// Normalized wire form of a point/scribble prompt drawn on an H x W image.
nlohmann::json prompt_to_json(const RoiPrompt& prompt, int height, int width);

// --------------------------------------------------------------------------

/// Alpha as a 16-bit grayscale PNG. Both entry points write results with it.
std::vector<unsigned char> encode_alpha_png(const AlphaMatte& alpha);

struct PipelineSpec {
    BackendKind backend = BackendKind::toy;
    std::string checkpoint;    // head parameters
    std::string features_dir;  // diffusion feature dumps; default <checkpoint dir>/features
    int timestep = 200;
    std::uint64_t seed = 0; // latent noise seed of the diffusion backend
    PipelineOptions options;
};

/// Loads head parameters and the backend. Throws BackendError / ParameterError / IoError.
std::shared_ptr<MattingPipeline> load_pipeline(const PipelineSpec& spec);

// --------------------------------------------------------------------------
// HTTP job service

struct ServiceConfig {
    std::filesystem::path store = "iconmat_store";
    PipelineSpec pipeline;
    int port = 8080;

    /// ICONMAT_CHECKPOINT, ICONMAT_STORE, ICONMAT_BACKEND, ICONMAT_PORT,
    /// ICONMAT_FEATURES, ICONMAT_TIMESTEP.
    static ServiceConfig from_env();
};

enum class JobState { queued, running, done, failed };
std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);

/// Store layout:
///   sessions/<sid>/session.json, sessions/<sid>/images/<image id>.png
///   jobs/<jid>/job.json, jobs/<jid>/results/<image id>_{alpha,guidance}.png
class MattingService {
public:
    /// `pipeline` may be null, in which case job requests answer 503.
    MattingService(std::filesystem::path store, std::shared_ptr<const MattingPipeline> pipeline,
                   std::string checkpoint_digest = {});
    ~MattingService();

    MattingService(const MattingService&) = delete;
    MattingService& operator=(const MattingService&) = delete;

    httplib::Server& http() { return *server_; }
    /// Binds and serves until stop(); returns false if the port is taken.
    bool listen(const std::string& host, int port);
    int bind_to_any_port(const std::string& host);
    bool listen_after_bind();
    void stop();

    /// Blocks until the job queue is empty and the worker is idle.
    void wait_idle();

private:
    struct Image {
        std::string id;
        std::string name;
        std::string role; // "image" or "mask"
    };
    struct Session {
        std::string id;
        std::vector<Image> images;
        nlohmann::json prompt; // null until set
        std::vector<std::string> jobs;
        std::mutex mutex;
    };
    struct Job {
        std::string id;
        std::string session;
        JobState state = JobState::queued;
        std::vector<std::string> targets;
        int done = 0;
        std::map<std::string, std::string> results;
        std::map<std::string, std::string> guidance;
        std::string error;
        std::string cache_key;
        nlohmann::json prompt;
    };

    void routes();
    void load_store();
    void worker_loop();
    void run_job(const std::string& job_id);

    std::shared_ptr<Session> find_session(const std::string& id);
    void save_session(const Session& s) const;
    void save_job(const Job& j) const;
    nlohmann::json job_json(const Job& j) const;
    std::string next_id(const std::string& prefix);
    std::string cache_key(const Session& s, const nlohmann::json& prompt) const;
    std::filesystem::path session_dir(const std::string& id) const;
    std::filesystem::path job_dir(const std::string& id) const;

    std::filesystem::path store_;
    std::shared_ptr<const MattingPipeline> pipeline_;
    std::string checkpoint_digest_;
    std::unique_ptr<httplib::Server> server_;

    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;

    std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::map<std::string, Job> jobs_;
    std::deque<std::string> queue_;
    std::map<std::string, std::string> cache_;
    bool busy_ = false;
    bool stopping_ = false;
    std::uint64_t counter_ = 0;
    std::thread worker_;
};

} // namespace icm
