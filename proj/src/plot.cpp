#include "rsovs/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace rsovs {

RunLog read_run_log(const fs::path& path) {
    const fs::path file = fs::is_directory(path) ? path / "train_log.jsonl" : path;
    std::ifstream in(file);
    if (!in) throw DataError("no training log at " + file.string());
    RunLog log;
    log.name = fs::is_directory(path) ? fs::path(path).lexically_normal().filename().string() : file.stem().string();
    if (log.name.empty()) log.name = fs::absolute(path).parent_path().filename().string();
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const std::string ev = j.at("event").get<std::string>();
            if (ev == "train") {
                LogRecord r;
                r.iteration = j.at("iteration").get<int64_t>();
                r.loss = j.at("loss").get<double>();
                r.lr = j.value("lr", 0.0);
                r.wall_time = j.value("wall_time", 0.0);
                r.all_ignored = j.value("all_ignored", int64_t{0});
                log.train.push_back(r);
            } else if (ev == "eval") {
                EvalRecord r;
                r.iteration = j.at("iteration").get<int64_t>();
                r.split = j.value("split", "");
                r.miou = j.at("mIoU").get<double>();
                r.fwiou = j.at("fwIoU").get<double>();
                r.macc = j.at("mACC").get<double>();
                log.evals.push_back(r);
            }
        } catch (const json::exception& e) {
            throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (log.train.empty() && log.evals.empty()) throw ConfigError("training log " + file.string() + " has no events");
    return log;
}

namespace {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

constexpr const char* kLineColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                       "#17becf", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void write_svg(const fs::path& path, const std::string& title, const std::string& ylabel,
               const std::vector<Series>& series) {
    constexpr double W = 720, H = 440, L = 70, R = 170, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    const double pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double xv = x0 + (x1 - x0) * k / 5, yv = y0 + (y1 - y0) * k / 5;
        o << "<line x1=\"" << px(xv) << "\" y1=\"" << H - B << "\" x2=\"" << px(xv) << "\" y2=\"" << H - B + 5
          << "\" stroke=\"#333\"/><text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
          << fmt(xv) << "</text>\n";
        o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
          << "\" stroke=\"#ddd\"/><text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
          << fmt(yv) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">iteration</text>\n";
    o << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(ylabel) << "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kLineColors[si % std::size(kLineColors)];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        o << "\"/>\n";
        if (s.x.size() <= 60)
            for (size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.y[i]))
                    o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\"" << color
                      << "\"/>\n";
        const double ly = T + 14 + 18 * static_cast<double>(si);
        o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly - 4
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << W - R + 36 << "\" y=\"" << ly << "\">"
          << escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << o.str();
}

}  // namespace

std::vector<fs::path> write_metric_plots(const std::vector<RunLog>& runs, const fs::path& out_dir) {
    if (runs.empty()) throw ConfigError("no run logs to plot");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

    // Identical directory names would collide in the legend and CSV.
    std::vector<std::string> names;
    for (size_t i = 0; i < runs.size(); ++i) {
        std::string n = runs[i].name.empty() ? "run" : runs[i].name;
        if (std::count(names.begin(), names.end(), n)) n += "#" + std::to_string(i + 1);
        names.push_back(n);
    }

    std::ofstream loss_csv(out_dir / "loss.csv"), eval_csv(out_dir / "eval.csv");
    if (!loss_csv || !eval_csv) throw DataError("cannot write CSV files under " + out_dir.string());
    loss_csv << "run,iteration,loss,lr,wall_time\n";
    eval_csv << "run,iteration,split,mIoU,fwIoU,mACC\n";
    loss_csv.precision(10);
    eval_csv.precision(10);

    std::vector<Series> loss, metrics;
    for (size_t i = 0; i < runs.size(); ++i) {
        Series s{names[i], {}, {}};
        for (const auto& r : runs[i].train) {
            loss_csv << names[i] << ',' << r.iteration << ',' << r.loss << ',' << r.lr << ',' << r.wall_time << '\n';
            s.x.push_back(static_cast<double>(r.iteration));
            s.y.push_back(r.loss);
        }
        loss.push_back(std::move(s));
        Series mi{names[i] + " mIoU", {}, {}}, fw{names[i] + " fwIoU", {}, {}}, ma{names[i] + " mACC", {}, {}};
        for (const auto& e : runs[i].evals) {
            eval_csv << names[i] << ',' << e.iteration << ',' << e.split << ',' << e.miou * 100 << ',' << e.fwiou * 100
                     << ',' << e.macc * 100 << '\n';
            for (auto [series, v] : {std::pair{&mi, e.miou}, std::pair{&fw, e.fwiou}, std::pair{&ma, e.macc}}) {
                series->x.push_back(static_cast<double>(e.iteration));
                series->y.push_back(v * 100);
            }
        }
        metrics.push_back(std::move(mi));
        if (runs.size() == 1) {
            metrics.push_back(std::move(fw));
            metrics.push_back(std::move(ma));
        }
    }
    write_svg(out_dir / "loss.svg", "training loss", "cross-entropy", loss);
    write_svg(out_dir / "metrics.svg", "evaluation metrics", "percent", metrics);
    return {out_dir / "loss.svg", out_dir / "metrics.svg", out_dir / "loss.csv", out_dir / "eval.csv"};
}

std::array<uint8_t, 3> category_color(const std::string& name) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    h ^= h >> 29;
    // Keep every channel away from black so masks stay readable.
    return {static_cast<uint8_t>(48 + (h & 0xff) * 207 / 255), static_cast<uint8_t>(48 + ((h >> 8) & 0xff) * 207 / 255),
            static_cast<uint8_t>(48 + ((h >> 16) & 0xff) * 207 / 255)};
}

Tensor<uint8_t> colorize(const LabelMask& labels, const std::vector<std::string>& categories) {
    if (labels.rank() != 2) throw ShapeError("colorize expects an [H, W] mask, got " + shape_str(labels.shape));
    std::vector<std::array<uint8_t, 3>> colors;
    for (const auto& c : categories) colors.push_back(category_color(c));
    Tensor<uint8_t> out({labels.dim(0), labels.dim(1), 3}, 0);
    for (int64_t i = 0; i < labels.numel(); ++i) {
        const int32_t v = labels.data[i];
        if (v < 0 || v >= static_cast<int32_t>(colors.size())) continue;
        for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = colors[v][c];
    }
    return out;
}

}  // namespace rsovs
