from ._stackbundle import (
    deconv_solve,
    dstack_load,
    dstack_save,
    estimate_noise_sigma,
    gen_coupled_sparse,
    gen_galaxy_stack,
    scdl_train,
    soft_threshold,
    starlet_decompose,
    starlet_reconstruct,
    svd_soft_threshold,
)

__all__ = [
    "deconv_solve",
    "dstack_load",
    "dstack_save",
    "estimate_noise_sigma",
    "gen_coupled_sparse",
    "gen_galaxy_stack",
    "scdl_train",
    "soft_threshold",
    "starlet_decompose",
    "starlet_reconstruct",
    "svd_soft_threshold",
]
