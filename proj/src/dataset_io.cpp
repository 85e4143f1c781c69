#include "rsmlp/errors.hpp"
#include "rsmlp/teacher_student.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace rsmlp {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'M', 'L', 'P', 'D', 'S', '1'};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void put(std::ofstream& out, const double* p, std::size_t n) {
    out.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(double)));
}

void get(std::ifstream& in, double* p, std::size_t n, const std::string& path) {
    in.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(double)));
    if (!in) throw IoError("dataset " + path + ": truncated payload");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    const auto& th = ds.teacher;
    nlohmann::json h;
    h["n"] = ds.n();
    h["d"] = ds.d();
    h["widths"] = th.arch.widths;
    h["activation"] = th.arch.act.name;
    h["centered"] = th.arch.act.centered;
    h["seed"] = ds.seed;
    h["delta"] = ds.delta;
    h["covariance"] = {{"kind", (int)ds.covariance.kind}, {"d0", ds.covariance.d0}, {"path", ds.covariance.path}};
    h["weight_prior"] = {{"name", ds.weight_prior.name()}, {"values", ds.weight_prior.values}, {"probs", ds.weight_prior.probs}};
    h["readout_prior"] = {{"name", ds.readout_prior.name}, {"values", ds.readout_prior.values}, {"probs", ds.readout_prior.probs}};
    h["byte_order"] = "little";
    std::string text = h.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset " + path);
    out.write(kMagic, 8);
    std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    RowMat X = ds.X;
    put(out, X.data(), X.size());
    put(out, ds.y.data(), ds.y.size());
    for (const auto& W : th.W) {
        RowMat w = W;
        put(out, w.data(), w.size());
    }
    put(out, th.v.data(), th.v.size());
    if (!out) throw IoError("write failed for dataset " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("dataset " + path + ": bad magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1u << 26)) throw IoError("dataset " + path + ": bad header length");
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    if (!in) throw IoError("dataset " + path + ": truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw IoError("dataset " + path + ": header is not valid JSON: " + e.what());
    }

    Dataset ds;
    try {
        const int n = h.at("n"), d = h.at("d");
        auto& th = ds.teacher;
        th.arch.d = d;
        th.arch.widths = h.at("widths").get<std::vector<int>>();
        th.arch.act = make_activation(h.at("activation").get<std::string>());
        if (h.at("centered").get<bool>()) th.arch.act = center_activation(th.arch.act);
        ds.seed = th.seed = h.at("seed").get<std::uint64_t>();
        ds.delta = h.at("delta");
        const auto& c = h.at("covariance");
        ds.covariance = {(CovarianceSpec::Kind)c.at("kind").get<int>(), c.at("d0"), c.at("path")};
        const auto& w = h.at("weight_prior");
        std::string wn = w.at("name");
        ds.weight_prior = wn == "discrete" ? WeightPrior::discrete(w.at("values"), w.at("probs")) : make_weight_prior(wn);
        const auto& r = h.at("readout_prior");
        ds.readout_prior = ReadoutPrior::atoms(r.at("values"), r.at("probs"), r.at("name"));

        RowMat X(n, d);
        get(in, X.data(), X.size(), path);
        ds.X = X;
        ds.y.resize(n);
        get(in, ds.y.data(), n, path);
        int fan = d;
        for (int k : th.arch.widths) {
            RowMat W(k, fan);
            get(in, W.data(), W.size(), path);
            th.W.push_back(W);
            fan = k;
        }
        th.v.resize(fan);
        get(in, th.v.data(), fan, path);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset " + path + ": malformed header: " + e.what());
    }
    return ds;
}

}  // namespace rsmlp
