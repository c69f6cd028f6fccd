#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "icm/image_io.hpp"
#include "icm/service.hpp"

using namespace icm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kToy = fs::path(ICM_SOURCE_DIR) / "data" / "toy_group";

int run(const std::string& args)
{
    const std::string cmd = std::string(ICONMAT_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

void write(const std::string& path, const std::string& text)
{
    std::ofstream(path) << text;
}

std::string points_json()
{
    return R"({"kind":"points","points":[{"x":0.45,"y":0.5},{"x":0.5,"y":0.45}]})";
}

std::string infer_args(const TempDir& t, const std::string& out, const std::string& extra = "")
{
    return "infer --checkpoint " + (t / "head.icma") + " --targets " + (kToy / "group0" / "images").string() +
           " --reference " + (kToy / "group0/images/frame0.png").string() + " --prompt " +
           (kToy / "group0/labels/frame0.png").string() + " --out " + (t / out) + " " + extra;
}

} // namespace

TEST_CASE("init then infer is byte deterministic")
{
    TempDir t("icm_test_cli_infer");
    REQUIRE(run("init --profile toy --seed 3 --out " + (t / "head.icma")) == 0);
    REQUIRE(run(infer_args(t, "a", "--save-guidance")) == 0);
    REQUIRE(run(infer_args(t, "b", "--save-guidance")) == 0);
    for (int i = 0; i < 4; ++i) {
        const std::string stem = "frame" + std::to_string(i);
        const auto a = io::read_bytes(t / ("a/" + stem + "_alpha.png"));
        CHECK(a == io::read_bytes(t / ("b/" + stem + "_alpha.png")));
        CHECK(io::read_png(t / ("a/" + stem + "_alpha.png")).height() ==
              io::read_png(kToy / "group0/images" / (stem + ".png")).height());
        CHECK(fs::exists(t / ("a/" + stem + "_guidance.png")));
    }
    const json outputs = json::parse(std::ifstream(t / "a/outputs.json"));
    CHECK(outputs["outputs"].size() == 4);
}

TEST_CASE("cli and http service produce identical alpha bytes")
{
    TempDir t("icm_test_cli_http");
    REQUIRE(run("init --profile toy --seed 5 --out " + (t / "head.icma")) == 0);
    write(t / "prompt.json", points_json());
    const fs::path target = kToy / "group0/images/frame2.png";
    fs::create_directories(t / "targets");
    fs::copy_file(target, t / "targets/frame2.png");
    REQUIRE(run("infer --checkpoint " + (t / "head.icma") + " --targets " + (t / "targets") + " --reference " +
                (kToy / "group0/images/frame0.png").string() + " --prompt " + (t / "prompt.json") +
                " --prompt-kind points --out " + (t / "cli")) == 0);
    const auto cli_bytes = io::read_bytes(t / "cli/frame2_alpha.png");

    PipelineSpec spec;
    spec.checkpoint = t / "head.icma";
    MattingService service(t.path / "store", load_pipeline(spec));
    const int port = service.bind_to_any_port("127.0.0.1");
    std::thread th([&] { service.listen_after_bind(); });
    httplib::Client c("127.0.0.1", port);
    for (int i = 0; i < 100 && !c.Get("/sessions"); ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));

    const std::string sid = json::parse(c.Post("/sessions")->body)["id"];
    auto upload = [&](const fs::path& p) {
        const auto bytes = io::read_bytes(p);
        httplib::MultipartFormDataItems items = {{"file", std::string(bytes.begin(), bytes.end()), p.filename().string(), "image/png"}};
        return json::parse(c.Post("/sessions/" + sid + "/images", items)->body)["images"][0]["id"].get<std::string>();
    };
    const std::string ref = upload(kToy / "group0/images/frame0.png");
    const std::string tgt = upload(target);
    json prompt = json::parse(points_json());
    prompt["reference_image_id"] = ref;
    REQUIRE(c.Put("/sessions/" + sid + "/prompt", prompt.dump(), "application/json")->status == 200);
    const std::string job = json::parse(c.Post("/sessions/" + sid + "/jobs", "", "application/json")->body)["id"];
    service.wait_idle();
    auto res = c.Get("/jobs/" + job + "/results/" + tgt);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    CHECK(std::vector<unsigned char>(res->body.begin(), res->body.end()) == cli_bytes);
    service.stop();
    th.join();
}

TEST_CASE("exit codes")
{
    TempDir t("icm_test_cli_codes");
    REQUIRE(run("init --profile toy --out " + (t / "head.icma")) == 0);
    CHECK(run("infer --bogus") == 2);
    CHECK(run("") == 2);
    CHECK(run(infer_args(t, "x", "--prompt-kind lasso")) == 2);
    // Unreadable checkpoint is a backend/parameter failure.
    write(t / "broken.icma", "not an archive");
    CHECK(run("infer --checkpoint " + (t / "broken.icma") + " --targets " + (kToy / "group0/images").string() +
              " --reference " + (kToy / "group0/images/frame0.png").string() + " --prompt " +
              (kToy / "group0/labels/frame0.png").string() + " --out " + (t / "y")) == 3);
    CHECK(run("infer --backend diffusion --features " + (t / "nowhere") + " --checkpoint " + (t / "head.icma") +
              " --targets " + (kToy / "group0/images").string() + " --reference " +
              (kToy / "group0/images/frame0.png").string() + " --prompt " +
              (kToy / "group0/labels/frame0.png").string() + " --out " + (t / "z")) == 3);
    // Empty prompt.
    write(t / "empty.json", R"({"kind":"points","points":[]})");
    CHECK(run("infer --checkpoint " + (t / "head.icma") + " --targets " + (kToy / "group0/images").string() +
              " --reference " + (kToy / "group0/images/frame0.png").string() + " --prompt " + (t / "empty.json") +
              " --prompt-kind points --out " + (t / "w")) == 4);
    CHECK(run("eval --checkpoint " + (t / "head.icma") + " --manifest " + (t / "missing.json") + " --out " +
              (t / "e")) == 2);
}

TEST_CASE("eval writes per-round and averaged reports")
{
    TempDir t("icm_test_cli_eval");
    REQUIRE(run("init --profile toy --out " + (t / "head.icma")) == 0);
    const std::string base = "eval --checkpoint " + (t / "head.icma") + " --manifest " +
                             (kToy / "manifest.json").string() + " --prompt-kind scribbles ";
    REQUIRE(run(base + "--rounds 1 --out " + (t / "r1")) == 0);
    REQUIRE(run(base + "--rounds 3 --out " + (t / "r3")) == 0);
    CHECK(fs::exists(t / "r3/report_round2.json"));
    CHECK_FALSE(fs::exists(t / "r1/report_round1.json"));
    const json r1 = json::parse(std::ifstream(t / "r1/report.json"));
    const json r3 = json::parse(std::ifstream(t / "r3/report.json"));
    CHECK(r1["images"].size() == 3);
    CHECK(r3["round"] == -1);
    // Round 0 is the same in both runs.
    CHECK(io::read_bytes(t / "r1/report_round0.json") == io::read_bytes(t / "r3/report_round0.json"));
    CHECK(fs::exists(t / "r3/predictions/round1/group0/frame1_alpha.png"));

    REQUIRE(run("eval --oracle --manifest " + (kToy / "manifest.json").string() + " --out " + (t / "o")) == 0);
    const json o = json::parse(std::ifstream(t / "o/report.json"));
    CHECK(o["overall"]["sad"] == 0.0);
}

TEST_CASE("train a few toy iterations and ingest")
{
    TempDir t("icm_test_cli_train");
    REQUIRE(run("train --profile toy --iters 10 --manifest " + (kToy / "manifest.json").string() + " --out " +
                (t / "run")) == 0);
    CHECK(fs::exists(t / "run/head_final.icma"));
    CHECK(fs::exists(t / "run/config.json"));
    std::ifstream csv(t / "run/loss.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);)
        ++lines;
    CHECK(lines == 11);

    REQUIRE(run("ingest --root " + kToy.string() + " --out " + (t / "m.json")) == 0);
    const json m = json::parse(std::ifstream(t / "m.json"));
    CHECK(m["stats"]["images"] == 4);
    CHECK(run("ingest --root " + (t / "absent") + " --out " + (t / "n.json")) != 0);
}
