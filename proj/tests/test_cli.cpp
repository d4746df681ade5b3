#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "fmk/keyed_head.hpp"
#include "fmk/verify.hpp"

namespace fs = std::filesystem;

// FMK_CLI_PATH is injected by the build; every command runs inside a scratch
// directory so the binary's relative-output behavior gets exercised too
namespace {

struct CliLab {
    std::string dir;

    CliLab() {
        dir = "/tmp/fmk_cli_" + std::to_string(::getpid());
        fs::create_directories(dir);
    }

    int run(const std::string& args) const {
        const std::string cmd = "cd " + dir + " && " + FMK_CLI_PATH + " " + args +
                                " >> cli_stdout.log 2>> cli_stderr.log";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string read(const std::string& rel) const {
        std::ifstream in(dir + "/" + rel, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    }
};

const CliLab& lab() {
    static const CliLab l;
    return l;
}

} // namespace

TEST_CASE("cli: keygen, train, forge, verify, tamper, dispersion chain") {
    const auto& cli = lab();

    CHECK(cli.run("keygen --registry reg.json --user alice --key 1234") == 0);
    const auto reg = fmk::KeyRegistry::load(cli.dir + "/reg.json");
    CHECK(reg.key_for("alice") == 0x1234);

    CHECK(cli.run("train --out model.fmk --classes 4 --side 6 --per-class 12 "
                  "--val-per-class 4 --steps 150 --seed 3") == 0);
    CHECK(fs::exists(cli.dir + "/model.fmk"));

    CHECK(cli.run("forge --model model.fmk --registry reg.json --user alice "
                  "--out bundle.fmb --count 2 --seed 8") == 0);
    CHECK(fs::exists(cli.dir + "/bundle.fmb"));

    CHECK(cli.run("verify --model model.fmk --bundle bundle.fmb --registry reg.json "
                  "--user alice --out clean.json") == 0);
    const auto clean = fmk::load_report(cli.dir + "/clean.json");
    CHECK(clean.paired_rate == 0.0);
    CHECK(clean.fingerprint_match);

    CHECK(cli.run("tamper --model model.fmk --out pruned.fmk --kind prune --rate 0.2") == 0);
    CHECK(cli.run("verify --model pruned.fmk --bundle bundle.fmb --registry reg.json "
                  "--user alice --out pruned.json") == 0);
    const auto pruned = fmk::load_report(cli.dir + "/pruned.json");
    CHECK(!pruned.fingerprint_match);

    CHECK(cli.run("dispersion --model model.fmk --count 3 --iters 200 --out disp.json") == 0);
    const auto disp = nlohmann::json::parse(cli.read("disp.json"));
    CHECK(disp.contains("median_cv"));
}

TEST_CASE("cli: experiment --write-default emits the stock config") {
    const auto& cli = lab();
    CHECK(cli.run("experiment --write-default stock.json") == 0);
    const auto j = nlohmann::json::parse(cli.read("stock.json"));
    CHECK(j["pair_count"] == 150);
    CHECK(j["tampers"].size() == 12);
}

TEST_CASE("cli: bad invocations exit nonzero with an error line") {
    const auto& cli = lab();
    CHECK(cli.run("explode") != 0);
    CHECK(cli.run("forge --model nope.fmk") != 0); // missing required flags
    CHECK(cli.run("verify --model missing.fmk --bundle bundle.fmb --registry reg.json "
                  "--user alice") != 0);
    CHECK(cli.run("tamper --model model.fmk --out x.fmk --kind melt") != 0);
    CHECK(cli.run("keygen --registry reg.json --user alice --key 1234") != 0); // duplicate

    const std::string err = cli.read("cli_stderr.log");
    CHECK(err.find("error:") != std::string::npos);
}

TEST_CASE("cli: cleanup") {
    fs::remove_all(lab().dir); // not a test; tears down the scratch space
    CHECK(true);
}
