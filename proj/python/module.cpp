// Python bindings for the main stackbundle operations: dstack IO, the
// starlet transform and prox operators, synthetic data generation, and the
// two solvers running on an in-process local executor.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stackbundle/datagen.hpp"
#include "stackbundle/deconv.hpp"
#include "stackbundle/dstack.hpp"
#include "stackbundle/local_executor.hpp"
#include "stackbundle/optim.hpp"
#include "stackbundle/scdl.hpp"
#include "stackbundle/starlet.hpp"

namespace py = pybind11;
using namespace stackbundle;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> dims(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[i] = static_cast<std::size_t>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(dims), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    py::array_t<double> a(shape);
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

std::unique_ptr<Engine> make_local_engine(int workers, int cores) {
    EngineConfig cfg;
    LocalExecutorConfig lcfg;
    lcfg.workers = workers;
    lcfg.cores_per_worker = cores;
    return std::make_unique<Engine>(cfg, std::make_unique<LocalExecutor>(lcfg));
}

} // namespace

PYBIND11_MODULE(_stackbundle, m) {
    m.doc() = "bundled-dataset engine: transforms, data generation, solvers";
    register_builtin_kernels();

    m.def("dstack_load", [](const std::string& path) { return to_array(dstack_load(path)); });
    m.def("dstack_save", [](const std::string& path, py::array_t<double> a) {
        dstack_save(path, to_tensor(a));
    });

    m.def("starlet_decompose", [](py::array_t<double> img, std::size_t scales) {
        const StarletCoeffs c = starlet_decompose(to_tensor(img), scales);
        py::list details;
        for (const Tensor& d : c.details) details.append(to_array(d));
        return py::make_tuple(details, to_array(c.coarse));
    });
    m.def("starlet_reconstruct", [](py::list details, py::array_t<double> coarse) {
        StarletCoeffs c;
        for (auto d : details)
            c.details.push_back(to_tensor(d.cast<py::array_t<double>>()));
        c.coarse = to_tensor(coarse);
        return to_array(starlet_reconstruct(c));
    });

    m.def("soft_threshold", [](py::array_t<double> x, double t) {
        return to_array(soft_threshold(to_tensor(x), t));
    });
    m.def("svd_soft_threshold", [](py::array_t<double> x, double lam) {
        auto [shrunk, nuclear] = svd_soft_threshold(to_tensor(x), lam);
        return py::make_tuple(to_array(shrunk), nuclear);
    });
    m.def("estimate_noise_sigma",
          [](py::array_t<double> img) { return estimate_noise_sigma(to_tensor(img)); });

    m.def(
        "gen_galaxy_stack",
        [](std::size_t n, std::size_t size, std::size_t psf_size, std::size_t unique_psfs,
           double sigma, std::uint64_t seed) {
            GalaxyStackSpec spec;
            spec.n_images = n;
            spec.stamp_size = size;
            spec.psf_size = psf_size;
            spec.n_unique_psfs = unique_psfs;
            spec.noise_sigma = sigma;
            spec.seed = seed;
            const GalaxyStack s = gen_galaxy_stack(spec);
            return py::make_tuple(to_array(s.observed), to_array(s.truth), to_array(s.psf),
                                  s.sigma);
        },
        py::arg("n"), py::arg("size") = 41, py::arg("psf_size") = 13,
        py::arg("unique_psfs") = 600, py::arg("sigma") = 0.01, py::arg("seed") = 0);

    m.def(
        "gen_coupled_sparse",
        [](std::size_t p_dim, std::size_t m_dim, std::size_t atoms, std::size_t samples,
           std::size_t sparsity, std::uint64_t seed) {
            const PatchPairs p = gen_coupled_sparse(p_dim, m_dim, atoms, samples, sparsity, seed);
            return py::make_tuple(to_array(p.s_h), to_array(p.s_l));
        },
        py::arg("p_dim"), py::arg("m_dim"), py::arg("atoms"), py::arg("samples"),
        py::arg("sparsity") = 5, py::arg("seed") = 0);

    m.def(
        "deconv_solve",
        [](py::array_t<double> y, py::array_t<double> psf, std::vector<double> sigma,
           const std::string& prior, py::object lambda_, std::size_t scales,
           int reweight_rounds, int max_iter, double eps, std::size_t partitions,
           int workers, int cores) {
            DeconvProblem pb;
            pb.y = to_tensor(y);
            pb.psf = to_tensor(psf);
            pb.sigma = std::move(sigma);
            pb.prior = prior == "lowrank" ? DeconvPrior::LowRank : DeconvPrior::Sparse;
            if (!lambda_.is_none()) pb.lambda = lambda_.cast<double>();
            pb.scales = scales;
            pb.reweight_rounds = reweight_rounds;
            pb.max_iter = max_iter;
            pb.eps = eps;
            pb.partitions = partitions;
            auto engine = make_local_engine(workers, cores);
            const DeconvResult r = deconv_solve(pb, *engine);
            return py::make_tuple(to_array(r.x), r.cost_history, r.converged, r.iterations);
        },
        py::arg("y"), py::arg("psf"), py::arg("sigma") = std::vector<double>{},
        py::arg("prior") = "sparse", py::arg("lam") = py::none(), py::arg("scales") = 3,
        py::arg("reweight_rounds") = 0, py::arg("max_iter") = 300, py::arg("eps") = 1e-4,
        py::arg("partitions") = 1, py::arg("workers") = 1, py::arg("cores") = 1);

    m.def(
        "scdl_train",
        [](py::array_t<double> s_h, py::array_t<double> s_l, std::size_t atoms, int max_iter,
           double lambda_h, double lambda_l, std::uint64_t seed, std::size_t partitions,
           int workers, int cores) {
            ScdlProblem pb;
            pb.s_h = to_tensor(s_h);
            pb.s_l = to_tensor(s_l);
            pb.atoms = atoms;
            pb.max_iter = max_iter;
            pb.lambda_h = lambda_h;
            pb.lambda_l = lambda_l;
            pb.seed = seed;
            pb.partitions = partitions;
            auto engine = make_local_engine(workers, cores);
            const ScdlResult r = scdl_train(pb, *engine);
            return py::make_tuple(to_array(r.x_h), to_array(r.x_l), r.nrmse_history,
                                  r.consensus_history);
        },
        py::arg("s_h"), py::arg("s_l"), py::arg("atoms") = 64, py::arg("max_iter") = 100,
        py::arg("lambda_h") = 0.1, py::arg("lambda_l") = 0.1, py::arg("seed") = 0,
        py::arg("partitions") = 1, py::arg("workers") = 1, py::arg("cores") = 1);
}
