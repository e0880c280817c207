// scadapter: dataset synthesis, training, style transfer and evaluation.
//
// Exit codes: 0 ok, 1 usage or unexpected failure, 2 input, 3 config, 4 data, 5 training, 6 sampling,
// 7 metric, 8 io, 9 format.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scadapter/errors.hpp"
#include "scadapter/pipeline.hpp"

namespace sc = scadapter;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> omega;
    std::string weights;
    std::string out;
    std::string mode = "transfer";
    std::string report;
    std::string content;
    std::vector<std::string> styles;
    std::string prompt;
    std::string manifest;
};

std::vector<double> parse_csv(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw sc::InputError("--weights: cannot parse '" + item + "'");
        }
    }
    return out;
}

sc::RunConfig load_config(const Options& o) {
    sc::RunConfig c = o.config.empty() ? sc::RunConfig::defaults() : sc::RunConfig::load(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.omega) c.omega = *o.omega;
    if (!o.weights.empty()) c.weights = parse_csv(o.weights);
    if (!o.prompt.empty()) c.prompt = o.prompt;
    c.validate();
    return c;
}

std::filesystem::path out_path(const Options& o, const sc::RunConfig& c, const std::string& fallback) {
    return o.out.empty() ? c.resolve(c.out_dir) / fallback : std::filesystem::path(o.out);
}

void print_json(const sc::json& j) { std::cout << j.dump(1) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SCAdapter style transfer toolkit"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "Run configuration (JSON)");
    app.add_option("--seed", o.seed, "Override the run seed");

    auto* encoder = app.add_subcommand("pretrain-encoder", "Fit and save the bundled toy encoder checkpoint");
    encoder->add_option("--out", o.out, "Checkpoint path");
    auto* build = app.add_subcommand("build-dataset", "Synthesize content groups, styles and triplets");
    auto* content = app.add_subcommand("train-content-extractor", "Fine-tune the content projector");
    auto* adapter = app.add_subcommand("train-adapter", "Pretrain the base denoiser, then train the adapter");

    auto* transfer = app.add_subcommand("transfer", "Stylize a content image");
    transfer->add_option("--content", o.content, "Content image (PPM)")->required();
    transfer->add_option("--style", o.styles, "Style image(s) (PPM)")->required();
    transfer->add_option("--omega", o.omega, "Style strength in [0, 1]");
    transfer->add_option("--weights", o.weights, "Blend weights for several styles (CSV)");
    transfer->add_option("--mode", o.mode, "transfer or t2i")->check(CLI::IsMember({"transfer", "t2i"}));
    transfer->add_option("--prompt", o.prompt, "Text prompt");
    transfer->add_option("--out", o.out, "Output image path");

    auto* t2i = app.add_subcommand("t2i", "Text-driven stylized synthesis (content branch removed)");
    t2i->add_option("--prompt", o.prompt, "Text prompt (defaults to the config prompt)");
    t2i->add_option("--style", o.styles, "Style image (PPM)")->required()->expected(1);
    t2i->add_option("--out", o.out, "Output image path");

    auto* sweep = app.add_subcommand("sweep-omega", "Render a grid over style strengths");
    sweep->add_option("--content", o.content, "Content image (PPM)")->required();
    sweep->add_option("--style", o.styles, "Style image (PPM)")->required()->expected(1);
    sweep->add_option("--prompt", o.prompt, "Text prompt");
    sweep->add_option("--out", o.out, "Output directory");

    auto* mix = app.add_subcommand("mix-styles", "Blend several styles with CSAdaIN");
    mix->add_option("--content", o.content, "Content image (PPM)")->required();
    mix->add_option("--style", o.styles, "Style images (PPM)")->required();
    mix->add_option("--weights", o.weights, "Blend weights (CSV)")->required();
    mix->add_option("--prompt", o.prompt, "Text prompt");
    mix->add_option("--out", o.out, "Output image path");

    auto* evaluate = app.add_subcommand("evaluate", "Metric report over a manifest's triplets");
    evaluate->add_option("--manifest", o.manifest, "Pairing manifest (JSONL)");
    evaluate->add_option("--report", o.report, "Report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const sc::RunConfig config = load_config(o);
        if (*encoder) {
            sc::EncoderPretrainConfig pc;
            pc.seed = config.backbone_seed;
            const auto path = out_path(o, config, "toy_encoder.json");
            std::filesystem::create_directories(std::filesystem::absolute(path).parent_path());
            const auto enc = sc::pretrain_toy_encoder(pc);
            enc.save(path);
            std::cout << "wrote " << enc.id() << " to " << path.string() << '\n';
        } else if (*build) {
            const auto m = sc::cmd_build_dataset(config);
            std::cout << "wrote " << m.images.size() << " images, " << m.groups.size() << " groups, "
                      << m.triplets.size() << " triplets to " << config.manifest_path().string() << '\n';
        } else if (*content) {
            const auto r = sc::cmd_train_content_extractor(config);
            std::cout << "content loss " << r.loss_log.front() << " -> " << r.loss_log.back() << "; wrote "
                      << config.projector_path().string() << '\n';
        } else if (*adapter) {
            const auto s = sc::cmd_train_adapter(config);
            if (!s.base_log.empty())
                std::cout << "base loss " << s.base_log.front().loss << " -> " << s.base_log.back().loss << '\n';
            if (!s.adapter_log.empty())
                std::cout << "adapter loss " << s.adapter_log.front().loss << " -> " << s.adapter_log.back().loss
                          << '\n';
            std::cout << "wrote " << config.model_path().string() << '\n';
        } else if (*transfer) {
            if (o.mode == "t2i") {
                if (o.styles.size() != 1) throw sc::InputError("t2i mode takes exactly one style image");
                const auto r = sc::cmd_t2i_stylize(config, config.prompt, o.styles.front(), out_path(o, config, "t2i.ppm"));
                print_json(r.metadata["audit"]);
            } else {
                std::vector<std::filesystem::path> styles(o.styles.begin(), o.styles.end());
                const auto path = out_path(o, config, "transfer.ppm");
                sc::cmd_transfer(config, o.content, styles, path);
                std::cout << "wrote " << path.string() << '\n';
            }
        } else if (*t2i) {
            const auto path = out_path(o, config, "t2i.ppm");
            const auto r = sc::cmd_t2i_stylize(config, config.prompt, o.styles.front(), path);
            std::cout << "wrote " << path.string() << '\n';
            print_json(r.metadata["audit"]);
        } else if (*sweep) {
            const auto dir = out_path(o, config, "sweep");
            sc::cmd_sweep_omega(config, o.content, o.styles.front(), dir);
            std::cout << "wrote " << (dir / "grid.ppm").string() << '\n';
        } else if (*mix) {
            std::vector<std::filesystem::path> styles(o.styles.begin(), o.styles.end());
            const auto path = out_path(o, config, "mix.ppm");
            sc::cmd_mix_styles(config, o.content, styles, path);
            std::cout << "wrote " << path.string() << '\n';
        } else if (*evaluate) {
            const std::filesystem::path manifest = o.manifest.empty() ? config.manifest_path() : std::filesystem::path(o.manifest);
            const std::filesystem::path report =
                o.report.empty() ? config.resolve(config.out_dir) / "report.json" : std::filesystem::path(o.report);
            const auto r = sc::cmd_evaluate(config, manifest, report);
            print_json(r.to_json()["aggregates"]);
        }
    } catch (const sc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
