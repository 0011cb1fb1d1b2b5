# -*- coding: utf-8 -*-
#
# leafkit documentation build configuration file.
from __future__ import absolute_import

import os
import sys

sys.path.insert(0, os.path.abspath('../..'))

from leafkit import version as leafkit_version  # noqa: E402

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'numpydoc',
]

numpydoc_show_class_members = False
autodoc_member_order = 'bysource'

source_suffix = '.rst'
master_doc = 'index'

project = u'leafkit'
copyright = u'2023, The leafkit Developers'
author = u'The leafkit Developers'

version = leafkit_version.short_version
release = leafkit_version.full_version

exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'nature'
htmlhelp_basename = 'leafkitdoc'

man_pages = [
    (master_doc, 'leafkit', u'leafkit Documentation', [author], 1)
]

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
}
