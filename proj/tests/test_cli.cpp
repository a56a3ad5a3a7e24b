#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "acrestore/common.hpp"
#include "acrestore/restoration.hpp"
#include "oracles.hpp"

using namespace acrestore;
namespace fs = std::filesystem;

namespace {

const fs::path kData = ACRESTORE_DATA_DIR;
const std::string kCli = ACRESTORE_CLI_PATH;

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "acrestore_cli_out.txt";
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::ostringstream buf;
    buf << in.rdbuf();
    return {WEXITSTATUS(status), buf.str()};
}

fs::path work_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("acrestore_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("cli end-to-end pipeline with stable exit codes") {
    const fs::path dir = work_dir("pipeline");
    const std::string case5 = (kData / "case5.json").string();
    const fs::path ds = dir / "ds";

    SUBCASE("missing case file exits 2 and names the path") {
        const RunResult r = run("gen /no/such/case.json --out " + (dir / "x").string());
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("/no/such/case.json") != std::string::npos);
    }

    const RunResult gen =
        run("gen " + case5 + " --count 20 --std 0.1 --seed 7 --out " + ds.string());
    REQUIRE(gen.exit_code == 0);
    CHECK(gen.output.find("16 train / 4 test") != std::string::npos);
    CHECK(fs::exists(ds / "manifest.json"));
    CHECK(fs::exists(ds / "run.json"));
    CHECK(fs::exists(ds / "truth" / "0.json"));
    CHECK(fs::exists(ds / "sources" / "socp_like" / "0.json"));

    SUBCASE("gen with --std 0 produces identical scenario multipliers") {
        const fs::path flat_ds = dir / "flat";
        REQUIRE(run("gen " + case5 + " --count 5 --std 0 --seed 7 --out " + flat_ds.string())
                    .exit_code == 0);
        const std::string text = slurp(flat_ds / "scenarios.json");
        CHECK(text.find("0.9") == std::string::npos);  // every multiplier exactly 1.0
        CHECK(text.find("1.1") == std::string::npos);
    }

    const fs::path params = dir / "params.json";
    const RunResult tr = run("train " + ds.string() + " --iters 12 --batch 8 --seed 3 --out " +
                             params.string());
    REQUIRE(tr.exit_code == 0);
    CHECK(fs::exists(params));
    CHECK(fs::exists(dir / "params.loss.socp_like.csv"));
    CHECK(fs::exists(dir / "params.loss.lpac_like.csv"));

    SUBCASE("training is byte-identical across reruns with one seed") {
        const fs::path p2 = dir / "params2.json";
        REQUIRE(run("train " + ds.string() + " --iters 12 --batch 8 --seed 3 --out " +
                    p2.string())
                    .exit_code == 0);
        CHECK(slurp(params) == slurp(p2));
    }

    SUBCASE("--iters 0 is rejected") {
        const RunResult r = run("train " + ds.string() + " --iters 0 --out " +
                                (dir / "nope.json").string());
        CHECK(r.exit_code == 2);
    }

    SUBCASE("restore round trip on exact measurements") {
        // exact measurement set for the nominal state of scenario 0
        const Network net = load_case(kData / "case5.json");
        const StateVector x = acrestore::test::random_state(net, 70, 0.1, 0.05);
        MeasurementSet set;
        set.network_fingerprint = net.fingerprint();
        set.sources = {"manual"};
        set.layout = MeasurementLayout::full_for_source(net, "manual");
        set.values = evaluate_h(net, x, set.layout);
        set.present.assign(static_cast<std::size_t>(set.size()), 1);
        const fs::path meas = dir / "meas.json";
        std::ofstream(meas) << measurement_set_to_json_text(net, set);

        const fs::path out = dir / "restored.json";
        const RunResult r = run("restore " + case5 + " " + meas.string() + " --out " +
                                out.string());
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("converged") != std::string::npos);
        CHECK(fs::exists(out));
        CHECK(slurp(out).find("\"converged\": true") != std::string::npos);

        // fingerprint mismatch: same measurements against another case
        const RunResult bad =
            run("restore " + (kData / "case2.json").string() + " " + meas.string());
        CHECK(bad.exit_code == 4);

        // starved iteration budget: exit 3, result still written
        MeasurementSet rough = set;
        SeededRng rng(4, "cli-noise");
        for (int i = 0; i < rough.size(); ++i) rough.values[i] += rng.normal(0.0, 0.2);
        const fs::path rough_meas = dir / "rough.json";
        std::ofstream(rough_meas) << measurement_set_to_json_text(net, rough);
        const fs::path rough_out = dir / "rough_result.json";
        const RunResult starved = run("restore " + case5 + " " + rough_meas.string() +
                                      " --max-iter 1 --out " + rough_out.string());
        CHECK(starved.exit_code == 3);
        CHECK(slurp(rough_out).find("\"converged\": false") != std::string::npos);
    }

    SUBCASE("eval writes reports and prints the table") {
        const fs::path out = dir / "report";
        const RunResult r = run("eval " + ds.string() + " " + params.string() + " --out " +
                                out.string() + " --table --combine socp_like,lpac_like");
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(dir / "report.csv"));
        CHECK(fs::exists(dir / "report.json"));
        CHECK(r.output.find("se_opt") != std::string::npos);

        const fs::path out2 = dir / "report2";
        REQUIRE(run("eval " + ds.string() + " " + params.string() + " --out " + out2.string() +
                    " --combine socp_like,lpac_like")
                    .exit_code == 0);
        CHECK(slurp(dir / "report.csv") == slurp(dir / "report2.csv"));
        CHECK(slurp(dir / "report.json") == slurp(dir / "report2.json"));
    }
}

TEST_CASE("cli check passes on bundled cases and fails the negative control") {
    const std::string case5 = (kData / "case5.json").string();
    const RunResult ok = run("check " + case5 + " --grad --sens --seed 5 --states 3");
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("all checks passed") != std::string::npos);

    const RunResult seeded = run("check " + case5 + " --grad --seed 99 --states 3");
    CHECK(seeded.exit_code == 0);

    const RunResult broken =
        run("check " + case5 + " --grad --states 1 --inject-jacobian-error");
    CHECK(broken.exit_code == 5);
    CHECK(broken.output.find("worst offender") != std::string::npos);

    const fs::path dump = work_dir("dump") / "sens";
    REQUIRE(run("check " + case5 + " --sens --dump-sens " + dump.string()).exit_code == 0);
    CHECK(fs::exists(dump.string() + ".dsigma.csv"));
    CHECK(fs::exists(dump.string() + ".dbias.csv"));
}

TEST_CASE("cli env seed override") {
    const fs::path dir = work_dir("envseed");
    const std::string case2 = (kData / "case2.json").string();
    const std::string cmd = "ACRESTORE_SEED=21 " + kCli + " gen " + case2 + " --count 4 --out " +
                            (dir / "a").string() + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const std::string manifest = slurp(dir / "a" / "manifest.json");
    CHECK(manifest.find("\"seed\": 21") != std::string::npos);
}
