use ndarray::Array4;
use rand::Rng;

use super::config::{BackboneKind, ModelConfig};
use crate::nn::{BatchNorm2d, Conv2d, Layer, MaxPool2d, Param, Relu, Sequential};

pub fn build_backbone<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Sequential {
    match config.backbone {
        BackboneKind::ToyCnn => toy_cnn(config.toy_widths, config.channels, rng),
        BackboneKind::Resnet50Like => resnet50(rng),
    }
}

fn conv_bn_relu<R: Rng + ?Sized>(
    seq: &mut Sequential,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    rng: &mut R,
) {
    seq.push(Conv2d::new(&format!("{name}.conv"), cin, cout, 3, stride, 1, false, rng));
    seq.push(BatchNorm2d::new(&format!("{name}.bn"), cout));
    seq.push(Relu::new());
}

/// Four 3×3 conv-BN-ReLU blocks; the last three have stride 2.
pub fn toy_cnn<R: Rng + ?Sized>(widths: [usize; 3], channels: usize, rng: &mut R) -> Sequential {
    let mut seq = Sequential::new();
    conv_bn_relu(&mut seq, "backbone.block1", 3, widths[0], 1, rng);
    conv_bn_relu(&mut seq, "backbone.block2", widths[0], widths[1], 2, rng);
    conv_bn_relu(&mut seq, "backbone.block3", widths[1], widths[2], 2, rng);
    conv_bn_relu(&mut seq, "backbone.block4", widths[2], channels, 2, rng);
    seq
}

/// ResNet bottleneck: 1×1 reduce, 3×3 (strided), 1×1 expand, plus shortcut.
pub struct Bottleneck {
    main: Sequential,
    shortcut: Option<Sequential>,
    out_relu: Relu,
}

impl Bottleneck {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        width: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let cout = width * 4;
        let mut main = Sequential::new();
        main.push(Conv2d::new(&format!("{name}.conv1"), cin, width, 1, 1, 0, false, rng));
        main.push(BatchNorm2d::new(&format!("{name}.bn1"), width));
        main.push(Relu::new());
        main.push(Conv2d::new(&format!("{name}.conv2"), width, width, 3, stride, 1, false, rng));
        main.push(BatchNorm2d::new(&format!("{name}.bn2"), width));
        main.push(Relu::new());
        main.push(Conv2d::new(&format!("{name}.conv3"), width, cout, 1, 1, 0, false, rng));
        main.push(BatchNorm2d::new(&format!("{name}.bn3"), cout));
        let shortcut = (stride != 1 || cin != cout).then(|| {
            let mut s = Sequential::new();
            s.push(Conv2d::new(&format!("{name}.downsample.0"), cin, cout, 1, stride, 0, false, rng));
            s.push(BatchNorm2d::new(&format!("{name}.downsample.1"), cout));
            s
        });
        Self {
            main,
            shortcut,
            out_relu: Relu::new(),
        }
    }
}

impl Layer for Bottleneck {
    fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let main = self.main.infer(x);
        let skip = match &self.shortcut {
            Some(s) => s.infer(x),
            None => x.clone(),
        };
        self.out_relu.infer(&(main + skip))
    }

    fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let main = self.main.forward(x);
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x),
            None => x.clone(),
        };
        self.out_relu.forward(&(main + skip))
    }

    fn backward(&mut self, grad_out: &Array4<f32>) -> Array4<f32> {
        let g = self.out_relu.backward(grad_out);
        let from_main = self.main.backward(&g);
        let from_skip = match &mut self.shortcut {
            Some(s) => s.backward(&g),
            None => g,
        };
        from_main + from_skip
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.main.params();
        if let Some(s) = &self.shortcut {
            p.extend(s.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.main.params_mut();
        if let Some(s) = &mut self.shortcut {
            p.extend(s.params_mut());
        }
        p
    }

    fn clear_cache(&mut self) {
        self.main.clear_cache();
        if let Some(s) = &mut self.shortcut {
            s.clear_cache();
        }
        self.out_relu.clear_cache();
    }
}

/// ResNet-50 trunk without the classification head; parameter names follow
/// the torchvision layout under a `backbone.` prefix.
pub fn resnet50<R: Rng + ?Sized>(rng: &mut R) -> Sequential {
    let mut seq = Sequential::new();
    seq.push(Conv2d::new("backbone.conv1", 3, 64, 7, 2, 3, false, rng));
    seq.push(BatchNorm2d::new("backbone.bn1", 64));
    seq.push(Relu::new());
    seq.push(MaxPool2d::new(3, 2, 1));
    let mut cin = 64;
    for (stage, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let name = format!("backbone.layer{}.{b}", stage + 1);
            seq.push(Bottleneck::new(&name, cin, width, stride, rng));
            cin = width * 4;
        }
    }
    seq
}
