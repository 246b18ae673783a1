// mechsim command-line driver.
//
// Exit codes: 0 success, 2 invalid input (validation, format, missing data,
// bad flags), 3 numeric failure (degenerate input, training divergence).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mechsim/activations.hpp"
#include "mechsim/circuits.hpp"
#include "mechsim/error.hpp"
#include "mechsim/eval.hpp"
#include "mechsim/graphsim.hpp"
#include "mechsim/rsa.hpp"
#include "mechsim/sae.hpp"
#include "mechsim/scenario.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mechsim;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

std::uint64_t fnv1a(const std::string &s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Writes via a temporary sibling and renames, so readers never see a
/// partially written file.
void write_atomic(const fs::path &path, const std::string &content)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw FormatError(fmt::format("cannot write '{}'", tmp.string()));
        out << content;
        if (!out)
            throw FormatError(fmt::format("failed writing '{}'", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Manifest recorded next to the primary output of every command.
struct RunManifest {
    std::string command;
    std::vector<std::string> inputs;
    json options = json::object();
    std::optional<std::uint64_t> seed;
    std::vector<std::string> outputs;

    void write(const fs::path &primary_output) const
    {
        json doc;
        doc["command"] = command;
        doc["inputs"] = inputs;
        doc["options"] = options;
        doc["config_hash"] = fmt::format("{:016x}", fnv1a(options.dump()));
        doc["seed"] = seed ? json(*seed) : json(nullptr);
        doc["outputs"] = outputs;
        doc["tool_version"] = MECHSIM_VERSION;
        write_atomic(primary_output.string() + ".manifest.json", doc.dump(2) + "\n");
    }
};

std::vector<std::string> or_default(const std::vector<std::string> &given,
                                    const std::vector<std::string> &fallback)
{
    return given.empty() ? fallback : given;
}

// --- cka ---------------------------------------------------------------------

struct CkaArgs {
    std::string acts, out, kernel = "linear";
    std::vector<std::string> domains, classes;
    std::optional<double> bandwidth;
};

void run_cka(const CkaArgs &a)
{
    const auto set = load_activations(a.acts);
    const auto domains = or_default(a.domains, set.domain_list());
    const auto classes = or_default(a.classes, set.class_list());
    CkaOptions opt;
    opt.kernel = parse_kernel(a.kernel);
    opt.bandwidth = a.bandwidth;
    const auto scores = cross_domain_cka(set, domains, classes, opt);
    write_atomic(a.out, cka_csv(scores, opt.kernel));

    RunManifest m{"cka", {a.acts}, {}, std::nullopt, {a.out}};
    m.options = {{"domains", domains}, {"classes", classes}, {"kernel", a.kernel}};
    if (a.bandwidth)
        m.options["bandwidth"] = *a.bandwidth;
    m.write(a.out);
}

// --- circuit -----------------------------------------------------------------

struct CircuitArgs {
    std::string network, acts, cls, domain, out, dot;
    std::vector<std::string> classes;
    std::optional<Index> target;
    AttributionConfig cfg;
};

void run_circuit(const CircuitArgs &a)
{
    a.cfg.validate();
    const auto net = load_network(a.network);
    const auto set = load_activations(a.acts);
    Index target = 0;
    if (a.target) {
        target = *a.target;
    } else {
        const auto classes = or_default(a.classes, set.class_list());
        const auto it = std::find(classes.begin(), classes.end(), a.cls);
        if (it == classes.end())
            throw MissingDataError(fmt::format("class '{}' not in the class list", a.cls));
        target = static_cast<Index>(it - classes.begin());
    }
    const auto rows = group_rows(set, a.domain, a.cls);
    const auto group = select_rows(set, rows);
    const auto circuit = discover_circuit(net, group.data, target, a.cfg, a.cls, a.domain);
    write_atomic(a.out, circuit_to_json(circuit));
    std::vector<std::string> outputs{a.out};
    if (!a.dot.empty()) {
        write_atomic(a.dot, circuit_to_dot(circuit));
        outputs.push_back(a.dot);
    }
    RunManifest m{"circuit", {a.network, a.acts}, {}, std::nullopt, outputs};
    m.options = {{"class", a.cls},
                 {"domain", a.domain},
                 {"target_logit", target},
                 {"ig_steps", a.cfg.ig_steps},
                 {"keep_frac", a.cfg.node_keep_fraction},
                 {"edges_per_node", a.cfg.edges_per_node}};
    m.write(a.out);
}

// --- circuit-compare -----------------------------------------------------------

struct CompareArgs {
    std::vector<std::string> circuits;
    std::string out, per_layer_out, summary_out;
    int wl_iters = kDefaultWlIterations;
};

void run_compare(const CompareArgs &a)
{
    if (a.wl_iters < 0)
        throw ValidationError("--wl-iters must be >= 0");
    std::vector<Circuit> circuits;
    for (const auto &path : a.circuits)
        circuits.push_back(load_circuit(path));
    const auto report = compare_circuits(circuits, a.wl_iters);
    write_atomic(a.out, circuit_pairs_csv(report));
    std::vector<std::string> outputs{a.out};
    if (!a.per_layer_out.empty()) {
        write_atomic(a.per_layer_out, circuit_layers_csv(report));
        outputs.push_back(a.per_layer_out);
    }
    if (!a.summary_out.empty()) {
        write_atomic(a.summary_out, circuit_summary_csv(report));
        outputs.push_back(a.summary_out);
    }
    RunManifest m{"circuit-compare", a.circuits, {}, std::nullopt, outputs};
    m.options = {{"wl_iters", a.wl_iters}};
    m.write(a.out);
}

// --- sae -----------------------------------------------------------------------

struct SaeTrainArgs {
    std::string acts, out;
    SaeTrainConfig cfg;
};

void run_sae_train(const SaeTrainArgs &a)
{
    const auto set = load_activations(a.acts);
    const auto result = sae_train(set, a.cfg);
    const fs::path tmp = a.out + ".tmp";
    save_sae(result.model, {a.cfg.seed, result.steps, a.cfg.lambda}, tmp);
    fs::rename(tmp, a.out);
    std::cerr << fmt::format("sae train: {} steps, loss {:.6g} -> {:.6g}, {} latents resampled\n",
                             result.steps, result.initial_loss, result.final_loss,
                             result.resampled_latents);

    RunManifest m{"sae train", {a.acts}, {}, a.cfg.seed, {a.out}};
    m.options = {{"lambda", a.cfg.lambda},
                 {"epochs", a.cfg.epochs},
                 {"batch_size", a.cfg.batch_size},
                 {"hidden", a.cfg.hidden},
                 {"resample_interval", a.cfg.resample_interval},
                 {"lr", a.cfg.learning_rate},
                 {"seed", a.cfg.seed}};
    m.write(a.out);
}

struct SaeShareArgs {
    std::string acts, model, test_domain, out;
    std::vector<std::string> classes;
    std::vector<Index> ks = kSharingKs;
};

void run_sae_share(const SaeShareArgs &a)
{
    const auto set = load_activations(a.acts);
    const auto model = load_sae(a.model);
    const auto classes = or_default(a.classes, set.class_list());
    const auto report = measure_feature_sharing(set, model, a.test_domain, classes, a.ks);
    write_atomic(a.out, feature_sharing_csv(report));
    std::cerr << fmt::format("feature sharing for '{}': {:.6f}\n", a.test_domain, report.mean);

    RunManifest m{"sae share", {a.acts, a.model}, {}, std::nullopt, {a.out}};
    m.options = {{"test_domain", a.test_domain}, {"classes", classes}, {"ks", a.ks}};
    m.write(a.out);
}

// --- zeroshot --------------------------------------------------------------------

struct ZeroShotArgs {
    std::string acts, text, templates, out, split = "test";
};

void run_zeroshot(const ZeroShotArgs &a)
{
    const auto set = load_activations(a.acts);
    const auto text = load_text_embeddings(a.text);
    if (!a.templates.empty()) {
        const auto ts = load_templates(a.templates);
        if (!text.templates.empty() && text.templates != ts.templates)
            throw ValidationError("template list in the text embedding file does not match the "
                                  "template file");
    }
    const auto w = zero_shot_weights(text.embeddings);
    if (w.weights.cols() != set.dim())
        throw ValidationError(fmt::format("image embeddings have dimension {}, text embeddings {}",
                                          set.dim(), w.weights.cols()));

    std::map<std::string, Index> class_index;
    for (std::size_t c = 0; c < text.classes.size(); ++c)
        class_index[text.classes[c]] = static_cast<Index>(c);
    std::vector<Index> labels;
    for (const auto &c : set.classes) {
        const auto it = class_index.find(c);
        if (it == class_index.end())
            throw MissingDataError(fmt::format("class '{}' has no text embeddings", c));
        labels.push_back(it->second);
    }

    const auto rankings = classify(set.data, w);
    std::string csv = "metric,domain,split,value\n";
    auto emit = [&](const std::string &domain, const std::vector<std::size_t> &rows) {
        Rankings r;
        std::vector<Index> l, pred;
        for (auto i : rows) {
            r.push_back(rankings[i]);
            l.push_back(labels[i]);
            pred.push_back(rankings[i].front());
        }
        const auto top1 = balanced_topk_report(r, l, 1);
        const auto excluded = static_cast<Index>(text.classes.size()) -
                              static_cast<Index>(top1.recall.size());
        if (excluded > 0)
            std::cerr << fmt::format("zeroshot: {} classes without samples in '{}' excluded from "
                                     "balanced accuracy\n",
                                     excluded, domain);
        csv += fmt::format("balanced_top1,{},{},{:.12g}\n", domain, a.split, top1.value);
        csv += fmt::format("balanced_top5,{},{},{:.12g}\n", domain, a.split,
                           balanced_topk_accuracy(r, l, 5));
        csv += fmt::format("macro_f1,{},{},{:.12g}\n", domain, a.split, macro_f1(pred, l));
        csv += fmt::format("top1,{},{},{:.12g}\n", domain, a.split, topk_accuracy(r, l, 1));
    };
    for (const auto &d : set.domain_list()) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < set.domains.size(); ++i)
            if (set.domains[i] == d)
                rows.push_back(i);
        emit(d, rows);
    }
    std::vector<std::size_t> all(set.domains.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    emit("all", all);
    write_atomic(a.out, csv);

    std::vector<std::string> inputs{a.acts, a.text};
    if (!a.templates.empty())
        inputs.push_back(a.templates);
    RunManifest m{"zeroshot", inputs, {}, std::nullopt, {a.out}};
    m.options = {{"split", a.split}};
    m.write(a.out);
}

// --- mixture -----------------------------------------------------------------------

struct MixtureArgs {
    std::string counts, out;
    std::int64_t budget = -1;
};

void run_mixture(const MixtureArgs &a)
{
    const auto available = parse_counts_csv(read_file(a.counts));
    const auto plan = plan_mixture(available, a.budget);
    write_atomic(a.out, mixture_csv(available, plan));
    RunManifest m{"mixture", {a.counts}, {}, std::nullopt, {a.out}};
    m.options = {{"budget", a.budget}};
    m.write(a.out);
}

// --- scenario ------------------------------------------------------------------------

struct ScenarioArgs {
    std::string out_dir;
    ScenarioOptions options;
};

void run_scenario(const ScenarioArgs &a)
{
    const auto s = make_shared_pathway_scenario(a.options);
    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    write_atomic(dir / "network.json", serialize_network(s.network));
    save_activations(s.inputs, dir / "inputs.acts");
    save_activations(activations_at_layer(s.network, s.inputs, s.representation_layer),
                     dir / "representations.acts");
    RunManifest m{"scenario",
                  {},
                  {},
                  a.options.seed,
                  {(dir / "network.json").string(), (dir / "inputs.acts").string(),
                   (dir / "representations.acts").string()}};
    m.options = {{"seed", a.options.seed},
                 {"samples_per_group", a.options.samples_per_group},
                 {"representation_layer", s.representation_layer}};
    m.write(dir / "network.json");
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"mechsim: representational and mechanistic similarity toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", MECHSIM_VERSION);

    CkaArgs cka_args;
    auto *cka = app.add_subcommand("cka", "Cross-domain CKA over mean class embeddings");
    cka->add_option("--acts", cka_args.acts, "ACTS activation file")->required();
    cka->add_option("--domains", cka_args.domains, "Domains (default: all, first-seen order)")
        ->delimiter(',');
    cka->add_option("--classes", cka_args.classes, "Classes (default: all)")->delimiter(',');
    cka->add_option("--kernel", cka_args.kernel, "linear or rbf")
        ->check(CLI::IsMember({"linear", "rbf"}));
    cka->add_option("--bandwidth", cka_args.bandwidth, "RBF bandwidth (default: median distance)");
    cka->add_option("--out", cka_args.out, "Output CSV")->required();

    CircuitArgs circ_args;
    auto *circ = app.add_subcommand("circuit", "Discover the circuit of one (class, domain) group");
    circ->add_option("--network", circ_args.network, "Network description file")->required();
    circ->add_option("--acts", circ_args.acts, "ACTS file of network inputs")->required();
    circ->add_option("--class", circ_args.cls, "Class label")->required();
    circ->add_option("--domain", circ_args.domain, "Domain label")->required();
    circ->add_option("--classes", circ_args.classes,
                     "Class order defining logit indices (default: first-seen order)")
        ->delimiter(',');
    circ->add_option("--target-logit", circ_args.target, "Explicit target logit index");
    circ->add_option("--ig-steps", circ_args.cfg.ig_steps, "Integrated-gradient steps")
        ->capture_default_str();
    circ->add_option("--keep-frac", circ_args.cfg.node_keep_fraction,
                     "Fraction of neurons kept per layer")
        ->capture_default_str();
    circ->add_option("--edges-per-node", circ_args.cfg.edges_per_node,
                     "Incoming edges kept per node")
        ->capture_default_str();
    circ->add_option("--out", circ_args.out, "Output circuit JSON")->required();
    circ->add_option("--dot", circ_args.dot, "Optional DOT rendering");

    CompareArgs cmp_args;
    auto *cmp = app.add_subcommand("circuit-compare", "Jaccard and WL similarity of circuits");
    cmp->add_option("circuits", cmp_args.circuits, "Circuit JSON files")->required();
    cmp->add_option("--wl-iters", cmp_args.wl_iters, "WL iterations")->capture_default_str();
    cmp->add_option("--out", cmp_args.out, "Pairwise CSV")->required();
    cmp->add_option("--per-layer-out", cmp_args.per_layer_out, "Per-layer Jaccard CSV");
    cmp->add_option("--summary-out", cmp_args.summary_out, "Class-averaged domain-pair CSV");

    auto *sae = app.add_subcommand("sae", "Sparse autoencoder training and feature sharing");
    sae->require_subcommand(1);
    SaeTrainArgs train_args;
    auto *train = sae->add_subcommand("train", "Train an SAE on an activation file");
    train->add_option("--acts", train_args.acts, "ACTS activation file")->required();
    train->add_option("--out", train_args.out, "Checkpoint path")->required();
    train->add_option("--lambda", train_args.cfg.lambda)->capture_default_str();
    train->add_option("--epochs", train_args.cfg.epochs)->capture_default_str();
    train->add_option("--batch-size", train_args.cfg.batch_size)->capture_default_str();
    train->add_option("--hidden", train_args.cfg.hidden, "Latent count (0 = 4x input)")
        ->capture_default_str();
    train->add_option("--resample-interval", train_args.cfg.resample_interval)
        ->capture_default_str();
    train->add_option("--lr", train_args.cfg.learning_rate)->capture_default_str();
    train->add_option("--seed", train_args.cfg.seed)->capture_default_str();

    SaeShareArgs share_args;
    auto *share = sae->add_subcommand("share", "Measure top-k feature sharing");
    share->add_option("--acts", share_args.acts, "ACTS activation file")->required();
    share->add_option("--model", share_args.model, "SAE checkpoint")->required();
    share->add_option("--test-domain", share_args.test_domain)->required();
    share->add_option("--classes", share_args.classes, "Classes (default: all)")->delimiter(',');
    share->add_option("--ks", share_args.ks, "k values")->delimiter(',');
    share->add_option("--out", share_args.out, "Output CSV")->required();

    ZeroShotArgs zs_args;
    auto *zs = app.add_subcommand("zeroshot", "Zero-shot metrics from precomputed embeddings");
    zs->add_option("--acts", zs_args.acts, "ACTS file of image embeddings")->required();
    zs->add_option("--text", zs_args.text, "Per-class, per-template text embeddings")->required();
    zs->add_option("--templates", zs_args.templates, "Template file to check against");
    zs->add_option("--split", zs_args.split)->capture_default_str();
    zs->add_option("--out", zs_args.out, "Output CSV")->required();

    MixtureArgs mix_args;
    auto *mix = app.add_subcommand("mixture", "Distribution-preserving subsampling plan");
    mix->add_option("--counts", mix_args.counts, "CSV domain,class,count")->required();
    mix->add_option("--budget", mix_args.budget, "Total samples to keep")->required();
    mix->add_option("--out", mix_args.out, "Output CSV")->required();

    ScenarioArgs sc_args;
    auto *sc = app.add_subcommand("scenario", "Write the shared-pathway demo network and data");
    sc->add_option("--out-dir", sc_args.out_dir)->required();
    sc->add_option("--seed", sc_args.options.seed)->capture_default_str();
    sc->add_option("--samples-per-group", sc_args.options.samples_per_group)
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "mechsim: error: " << e.what() << "\n";
        return kExitInput;
    }

    try {
        if (*cka)
            run_cka(cka_args);
        else if (*circ)
            run_circuit(circ_args);
        else if (*cmp)
            run_compare(cmp_args);
        else if (*train)
            run_sae_train(train_args);
        else if (*share)
            run_sae_share(share_args);
        else if (*zs)
            run_zeroshot(zs_args);
        else if (*mix)
            run_mixture(mix_args);
        else if (*sc)
            run_scenario(sc_args);
    } catch (const DegenerateInputError &e) {
        std::cerr << "mechsim: numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const TrainingDivergenceError &e) {
        std::cerr << "mechsim: numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error &e) {
        std::cerr << "mechsim: error: " << e.what() << "\n";
        return kExitInput;
    } catch (const fs::filesystem_error &e) {
        std::cerr << "mechsim: error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception &e) {
        std::cerr << "mechsim: internal error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
