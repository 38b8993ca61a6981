#include <cstdio>
#include <vector>

#include "tesser/train.hpp"

using namespace tesser;

int main() {
    ViTArch arch;
    arch.image_side = 16;
    arch.patch_size = 4;
    arch.embed_dim = 32;
    arch.heads = 2;
    arch.depth = 2;
    arch.mlp_ratio = 2;
    arch.classes = 10;
    DatasetSpec spec;
    spec.seed = 99;
    spec.count = 10;
    spec.image_side = 16;

    for (double lr : {0.01, 0.005, 0.002, 0.001}) {
        ViTParams p0 = train_vit(arch, spec, 0, lr, 42);
        double before = eval_loss(p0, spec, 0, 10);
        ViTParams p1 = train_vit(arch, spec, 1, lr, 42, 2);
        double after = eval_loss(p1, spec, 0, 10);
        std::printf("vit 1ep lr=%.4f: before=%.6f after=%.6f %s\n", lr, before, after,
                    after < before ? "DOWN" : "UP");
    }
    // several epochs at moderate lr
    for (int ep : {3, 10}) {
        for (double lr : {0.02, 0.01, 0.005}) {
            ViTParams p1 = train_vit(arch, spec, ep, lr, 42, 2);
            double after = eval_loss(p1, spec, 0, 10);
            std::printf("vit %dep lr=%.4f: after=%.6f\n", ep, lr, after);
        }
    }
    return 0;
}
