// bvod: dataset generation, model sweeps, detector calibration, and online
// out-of-distribution detection from one command-line tool.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "bvod/container.hpp"
#include "bvod/detector.hpp"
#include "bvod/error.hpp"
#include "bvod/factors.hpp"
#include "bvod/imagegen.hpp"
#include "bvod/report.hpp"
#include "bvod/runconfig.hpp"
#include "bvod/selection.hpp"
#include "bvod/vae.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kSweepReportName = "sweep_report.csv";
constexpr const char* kSweepHeader = "beta,nLatent,final_loss,val_mse,avg_kl";

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::size_t end = comma == std::string::npos ? s.size() : comma;
        std::string item = s.substr(start, end - start);
        if (!item.empty()) out.push_back(std::move(item));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string model_file_name(std::size_t row) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "model_%03zu.bvod", row);
    return buf;
}

// ---- gen-data ----

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    const bvod::RunConfig cfg = bvod::load_run_config(config_path);
    const bvod::PartitionSpec spec = cfg.partition_spec();
    const bvod::Partition part = bvod::generate_partition(spec);
    fs::create_directories(out_dir);

    const bvod::PartitionMeta meta{spec.factor, spec.in_dist_value};
    const struct {
        const char* name;
        const bvod::Dataset* images;
    } splits[] = {{"train", &part.train},
                  {"validation", &part.validation},
                  {"test1", &part.test1},
                  {"test2", &part.test2}};
    for (const auto& s : splits) {
        if (s.images->empty()) {
            std::cerr << "warning: " << s.name << " split is empty; no file written\n";
            continue;
        }
        const fs::path path = fs::path(out_dir) / (std::string(s.name) + ".bvod");
        bvod::save_dataset_with_meta(path.string(), *s.images, meta);
        std::cout << s.name << ": " << s.images->size() << " images -> " << path.string()
                  << "\n";
    }
    return 0;
}

// ---- sweep ----

int cmd_sweep(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, std::size_t jobs) {
    const bvod::RunConfig cfg = bvod::load_run_config(config_path);
    bvod::Partition data;
    data.train = bvod::load_dataset((fs::path(data_dir) / "train.bvod").string());
    data.validation = bvod::load_dataset((fs::path(data_dir) / "validation.bvod").string());

    std::cout << "sweep: " << cfg.betas.size() << " betas x " << cfg.n_latents.size()
              << " latent widths on " << data.train.size() << " training images ("
              << jobs << (jobs == 1 ? " worker)\n" : " workers)\n");
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<bvod::SweepRecord> records =
        bvod::run_sweep(cfg.sweep_grid(), data, cfg.vae_config(), jobs);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(out_dir);
    std::ofstream table(fs::path(out_dir) / kSweepReportName, std::ios::trunc);
    if (!table) throw bvod::Error("cannot write sweep report in '" + out_dir + "'");
    table << kSweepHeader << "\n";
    std::size_t n_ok = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const bvod::SweepRecord& r = records[i];
        table << fmt17(r.beta) << ',' << r.n_latent << ',' << fmt17(r.final_loss) << ','
              << fmt17(r.val_mse) << ',' << fmt17(r.avg_kl) << "\n";
        if (r.ok()) {
            bvod::save_model((fs::path(out_dir) / model_file_name(i)).string(), *r.model);
            ++n_ok;
            std::cout << "  beta=" << r.beta << " nLatent=" << r.n_latent
                      << ": loss=" << r.final_loss << " val_mse=" << r.val_mse
                      << " avg_kl=" << r.avg_kl << "\n";
        } else {
            std::cerr << "  beta=" << r.beta << " nLatent=" << r.n_latent
                      << ": failed: " << r.error << "\n";
        }
    }
    table.close();
    std::cout << n_ok << "/" << records.size() << " cells trained in " << elapsed
              << "s; table -> " << (fs::path(out_dir) / kSweepReportName).string() << "\n";
    if (n_ok == 0) throw bvod::Error("every sweep cell failed");
    return 0;
}

// ---- select ----

std::vector<bvod::SweepRecord> load_sweep_dir(const std::string& sweep_dir) {
    const fs::path table_path = fs::path(sweep_dir) / kSweepReportName;
    std::ifstream table(table_path);
    if (!table) throw bvod::Error("cannot open sweep report '" + table_path.string() + "'");
    std::string line;
    if (!std::getline(table, line) || line != kSweepHeader)
        throw bvod::Error("sweep report '" + table_path.string() + "' has unexpected header");

    std::vector<bvod::SweepRecord> records;
    while (std::getline(table, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields = split_commas(line);
        if (fields.size() != 5)
            throw bvod::Error("sweep report row '" + line + "' has " +
                              std::to_string(fields.size()) + " fields, expected 5");
        bvod::SweepRecord rec;
        auto num = [&](const std::string& s) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size())
                throw bvod::Error("sweep report value '" + s + "' is not a number");
            return v;
        };
        rec.beta = num(fields[0]);
        rec.n_latent = static_cast<std::size_t>(num(fields[1]));
        rec.final_loss = num(fields[2]);
        rec.val_mse = num(fields[3]);
        rec.avg_kl = num(fields[4]);
        const fs::path model_path = fs::path(sweep_dir) / model_file_name(records.size());
        if (fs::exists(model_path)) {
            rec.model = std::make_shared<bvod::VaeModel>(bvod::load_model(model_path.string()));
        } else {
            rec.error = "no model file";
        }
        records.push_back(std::move(rec));
    }
    if (records.empty())
        throw bvod::Error("sweep report '" + table_path.string() + "' lists no cells");
    return records;
}

int cmd_select(const std::string& sweep_dir, const std::string& data_dir, int percentile,
               const std::string& out_path, std::string factor, double w_mse, double w_kl,
               bool plain_percentile, const std::string& kl_out) {
    const std::vector<bvod::SweepRecord> records = load_sweep_dir(sweep_dir);
    const std::string train_path = (fs::path(data_dir) / "train.bvod").string();
    const bvod::Dataset train = bvod::load_dataset(train_path);
    const bvod::Dataset validation =
        bvod::load_dataset((fs::path(data_dir) / "validation.bvod").string());

    if (factor.empty()) {
        const std::optional<bvod::PartitionMeta> meta = bvod::load_dataset_meta(train_path);
        if (!meta)
            throw bvod::ConfigError(
                "dataset records no partition factor; pass --factor explicitly");
        factor = meta->factor;
    }
    bvod::factor_def(factor);  // rejects unknown names before any work

    const bvod::SelectionReport rep =
        bvod::select_detector(records, train, validation, factor, percentile, w_mse, w_kl,
                              !plain_percentile);
    bvod::save_detectors(out_path, {rep.spec});

    std::cout << "selected beta=" << rep.spec.beta << " nLatent=" << rep.spec.n_latent
              << " (sweep row " << rep.record_index << ")\n"
              << "factor=" << rep.spec.factor << " latent=" << rep.spec.latent_index
              << " tau=" << rep.spec.tau << " (percentile " << rep.spec.percentile
              << " value " << rep.tau_percentile << ")\n"
              << "spec -> " << out_path << "\n";

    if (!kl_out.empty()) {
        fs::create_directories(kl_out);
        const struct {
            const char* name;
            const std::vector<double>* values;
        } series[] = {{"train_kl.txt", &rep.train_kl},
                      {"validation_kl.txt", &rep.validation_kl}};
        for (const auto& s : series) {
            const fs::path path = fs::path(kl_out) / s.name;
            std::ofstream out(path, std::ios::trunc);
            if (!out) throw bvod::Error("cannot write '" + path.string() + "'");
            for (double v : *s.values) out << fmt17(v) << "\n";
            std::cout << s.name << ": " << s.values->size() << " values -> "
                      << path.string() << "\n";
        }
    }
    return 0;
}

// ---- detect ----

struct NamedSplit {
    std::string name;
    bvod::Dataset images;
};

std::vector<NamedSplit> load_detect_input(const std::string& input) {
    std::vector<NamedSplit> splits;
    if (input == "-") {
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(std::cin)),
                                        std::istreambuf_iterator<char>());
        splits.push_back({"stream", bvod::deserialize_dataset(bytes)});
        return splits;
    }
    if (fs::is_directory(input)) {
        for (const char* name : {"train", "validation", "test1", "test2"}) {
            const fs::path path = fs::path(input) / (std::string(name) + ".bvod");
            if (fs::exists(path)) splits.push_back({name, bvod::load_dataset(path.string())});
        }
        if (splits.empty())
            throw bvod::Error("no dataset files (*.bvod splits) in '" + input + "'");
        return splits;
    }
    splits.push_back({fs::path(input).stem().string(), bvod::load_dataset(input)});
    return splits;
}

int cmd_detect(const std::string& specs_arg, const std::string& input,
               const std::string& report_path) {
    std::vector<bvod::DetectorSpec> specs;
    for (const std::string& path : split_commas(specs_arg))
        for (bvod::DetectorSpec& s : bvod::load_detectors(path))
            specs.push_back(std::move(s));
    const bvod::DetectorChain chain(std::move(specs));

    const std::vector<NamedSplit> splits = load_detect_input(input);

    std::ofstream log(report_path, std::ios::trunc);
    if (!log) throw bvod::Error("cannot write detection log '" + report_path + "'");
    log << "split,image_id,factor,score,flag\n";

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t n_images = 0;
    for (const NamedSplit& split : splits) {
        struct Tally {
            std::size_t flagged = 0;
            std::size_t errors = 0;
        };
        std::map<std::string, Tally> tallies;
        for (const bvod::LabeledImage& img : split.images) {
            const bvod::DetectionResult res = chain.run(img.pixels);
            ++n_images;
            for (const bvod::FactorResult& fr : res.factors) {
                if (fr.ok()) {
                    log << split.name << ',' << img.scene_id << ',' << fr.factor << ','
                        << fmt17(fr.score) << ',' << (fr.out_of_distribution ? 1 : 0)
                        << "\n";
                    if (fr.out_of_distribution) ++tallies[fr.factor].flagged;
                    else tallies[fr.factor];
                } else {
                    log << split.name << ',' << img.scene_id << ',' << fr.factor
                        << ",nan,error\n";
                    ++tallies[fr.factor].errors;
                    std::cerr << "warning: " << split.name << " image " << img.scene_id
                              << " (" << fr.factor << "): " << fr.error << "\n";
                }
            }
        }
        for (const bvod::DetectorSpec& spec : chain.specs()) {
            const Tally t = tallies[spec.factor];
            const std::size_t n = split.images.size();
            const double pct =
                n == 0 ? 0.0 : 100.0 * static_cast<double>(t.flagged) / static_cast<double>(n);
            std::cout << split.name << " / " << spec.factor << ": " << t.flagged << "/" << n
                      << " out-of-distribution (" << pct << "%)";
            if (t.errors) std::cout << ", " << t.errors << " errors";
            std::cout << "\n";
        }
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << n_images << " images scored in " << elapsed << "s; log -> " << report_path
              << "\n";
    return 0;
}

// ---- report ----

int cmd_report(const std::string& in_arg, const std::string& out_arg, std::size_t bins,
               int percentile, std::optional<double> tau_override) {
    const std::vector<std::string> inputs = split_commas(in_arg);
    if (inputs.size() != 2)
        throw bvod::ConfigError("--in expects two files: training values, validation values");

    std::vector<std::string> warnings;
    const std::vector<double> train = bvod::read_value_file(inputs[0], &warnings);
    const std::vector<double> validation = bvod::read_value_file(inputs[1], &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

    double tau;
    if (tau_override) {
        tau = *tau_override;
    } else {
        if (train.empty())
            throw bvod::Error("training series '" + inputs[0] +
                              "' has no usable rows, cannot place the threshold");
        tau = bvod::calibrate_threshold(train, percentile);
    }

    const bvod::Histogram h = bvod::bin_histogram(train, validation, tau, bins);

    fs::path svg_path(out_arg), csv_path(out_arg);
    const std::string ext = svg_path.extension().string();
    if (ext == ".svg") {
        csv_path.replace_extension(".csv");
    } else if (ext == ".csv") {
        svg_path.replace_extension(".svg");
    } else {
        svg_path += ".svg";
        csv_path += ".csv";
    }
    bvod::write_histogram_svg(svg_path.string(), h);
    bvod::write_histogram_csv(csv_path.string(), h);
    std::cout << "train rows: " << train.size() << ", validation rows: " << validation.size()
              << ", tau = " << tau << "\n"
              << "plot -> " << svg_path.string() << "\ncounts -> " << csv_path.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beta-VAE out-of-distribution detection toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "bvod 0.1.0");

    std::string config_path, out_path, data_dir, sweep_dir, specs_arg, input_arg, in_arg,
        report_path, factor;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::size_t bins = 30;
    int percentile = 75;
    double w_mse = 1.0, w_kl = 1.0;
    bool plain_percentile = false;
    std::string kl_out;
    std::optional<double> tau_override;
    double tau_value = 0.0;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the four dataset splits");
    gen->add_option("--config", config_path, "Run configuration file")->required();
    gen->add_option("--out", out_path, "Output directory")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "Train one model per grid cell");
    sweep->add_option("--data", data_dir, "Dataset directory from gen-data")->required();
    sweep->add_option("--config", config_path, "Run configuration file")->required();
    sweep->add_option("--out", out_path, "Output directory for models and table")->required();
    sweep->add_option("--jobs", jobs, "Worker threads (default: hardware threads)");

    CLI::App* select = app.add_subcommand("select", "Calibrate a detector from a sweep");
    select->add_option("--sweep", sweep_dir, "Sweep output directory")->required();
    select->add_option("--data", data_dir, "Dataset directory from gen-data")->required();
    select->add_option("--percentile", percentile, "Threshold percentile (default 75)")
        ->check(CLI::Range(1, 100));
    select->add_option("--out", out_path, "Detector spec file to write")->required();
    select->add_option("--factor", factor, "Monitored factor (default: from dataset)");
    select->add_option("--w-mse", w_mse, "Rank weight for validation MSE (default 1)");
    select->add_option("--w-kl", w_kl, "Rank weight for average divergence (default 1)");
    select->add_flag("--plain-percentile", plain_percentile,
                     "Keep the raw percentile threshold without separation refinement");
    select->add_option("--kl-out", kl_out, "Directory for per-image divergence value files");

    CLI::App* detect = app.add_subcommand("detect", "Score images with detector chains");
    detect->add_option("--specs", specs_arg, "Comma-separated detector spec files")
        ->required();
    detect->add_option("--input", input_arg, "Dataset directory, dataset file, or - for stdin")
        ->required();
    detect->add_option("--report", report_path, "Detection log to write")->required();

    CLI::App* report = app.add_subcommand("report", "Histogram plot of divergence values");
    report->add_option("--in", in_arg, "Two value files: training,validation")->required();
    report->add_option("--out", out_path, "Output path (.svg/.csv pair)")->required();
    report->add_option("--bins", bins, "Histogram bins (default 30)")
        ->check(CLI::PositiveNumber);
    report->add_option("--percentile", percentile,
                       "Threshold percentile over the training series (default 75)")
        ->check(CLI::Range(1, 100));
    CLI::Option* tau_opt =
        report->add_option("--tau", tau_value, "Explicit threshold (overrides --percentile)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path);
        if (sweep->parsed()) return cmd_sweep(data_dir, config_path, out_path, jobs);
        if (select->parsed())
            return cmd_select(sweep_dir, data_dir, percentile, out_path, factor, w_mse, w_kl,
                              plain_percentile, kl_out);
        if (detect->parsed()) return cmd_detect(specs_arg, input_arg, report_path);
        if (report->parsed()) {
            if (tau_opt->count()) tau_override = tau_value;
            return cmd_report(in_arg, out_path, bins, percentile, tau_override);
        }
    } catch (const bvod::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
