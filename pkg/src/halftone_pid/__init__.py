"""Cascaded GAN/CNN pipeline for source color laser printer identification on synthetic halftones."""
